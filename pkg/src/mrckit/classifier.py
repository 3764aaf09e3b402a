"""Training, prediction rules, risk evaluation, and certified bounds.

Training builds the uncertainty set from the data, minimizes the learning
objective over an anchor instance pool (the training instances by default),
and then solves the companion problem that certifies a lower bound on the
error probability of the learned randomized rule. Both bounds come out of
the learning stage itself; no holdout is involved.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import estimate, features, objective
from .dataset import NormalizationStats, apply_normalizer, fit_normalizer
from .solver import (SolverConfig, UnboundedObjectiveError, DivergenceError,
                     solve)

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

# Uniform-fallback threshold for the normalization constant of the rule.
EPS_NUM = 1e-12


@dataclass
class MrcModel:
    mu_star: np.ndarray
    phi_star: float
    minimax_risk: float                  # upper bound, clamped to [0, 1]
    lower_bound: float | None            # lower bound, clamped; None if skipped
    uncertainty: estimate.UncertaintySet
    feature_spec: features.FeatureMapSpec
    normalization: NormalizationStats | None
    instance_anchor: np.ndarray          # pool defining phi, normalized space
    label_names: tuple
    variant: str = "standard"            # or "fixed_marginal"
    mu_lower: np.ndarray | None = None   # solution of the lower-bound problem
    raw_bounds: dict = field(default_factory=dict)
    solver_info: dict = field(default_factory=dict)
    training_trace: list | None = None   # (iter, sec, best, gamma); not serialized

    @property
    def num_classes(self):
        return self.feature_spec.num_classes


def _normalize_instances(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.normalization is None:
        return X
    return (X - model.normalization.mean) / model.normalization.std


def _clamp(value):
    return min(1.0, max(0.0, value))


def train(data, spec=None, *, lambda_mode="practical", lambda0=0.3, delta=0.05,
          rademacher_R=None, solver_config=None, anchor=None,
          variant="standard", normalize=True, repair="auto",
          compute_lower=True):
    """Learn a minimax risk classifier from a Dataset.

    `anchor` optionally supplies the instance pool over which the support
    function is evaluated (raw space; training instances by default).
    `repair` controls the feasibility fix-up when the restricted uncertainty
    set is empty: "auto" repairs after an unboundedness signal, "always"
    repairs up front, "never" propagates the error.
    """
    if solver_config is None:
        solver_config = SolverConfig()
    if repair not in ("auto", "always", "never"):
        raise ValueError(f"unknown repair policy {repair!r}")
    if variant not in ("standard", "fixed_marginal"):
        raise ValueError(f"unknown variant {variant!r}")

    stats = None
    X = data.instances
    if normalize:
        stats = fit_normalizer(data)
        X = apply_normalizer(stats, data).instances
    y = data.labels
    n = data.n

    if spec is None:
        spec = features.rff_spec(data.num_classes, data.d)
    if spec.num_classes != data.num_classes:
        raise ValueError("feature spec class count does not match the data")
    if spec.d != data.d:
        raise ValueError("feature spec dimensionality does not match the data")

    psi = features.scalar_feature_matrix(spec, X)
    want_var = lambda_mode in ("bernstein", "practical")
    tau, var = estimate.tau_and_variance_from_scalars(
        psi, y, spec.num_classes, want_variance=want_var and n >= 2)
    C = features.feature_bound(spec, X)
    if spec.kind == features.KIND_IDENTITY and spec.feature_bound is None:
        spec.feature_bound = C
    family_size = features.block_dim(spec)

    if lambda_mode == "hoeffding":
        lam = np.full(tau.size, estimate.lambda_hoeffding(
            C, family_size, spec.num_classes, delta, n))
    elif lambda_mode == "bernstein":
        lam = estimate.lambda_bernstein(
            C, family_size, spec.num_classes, delta, n, var)
    elif lambda_mode == "rademacher":
        if rademacher_R is None:
            raise ValueError("lambda_mode='rademacher' needs rademacher_R")
        counts = np.bincount(y, minlength=spec.num_classes + 1)[1:]
        lam = estimate.lambda_rademacher(
            C, rademacher_R, delta, n, counts, features.block_labels(spec))
    elif lambda_mode == "practical":
        lam = estimate.lambda_practical(lambda0, var, n)
    else:
        raise ValueError(f"unknown lambda_mode {lambda_mode!r}")

    provenance = {
        "lambda_mode": lambda_mode, "delta": delta, "lambda0": lambda0,
        "rademacher_R": rademacher_R, "C": C, "family_size": family_size,
        "n": n,
    }
    unc = estimate.UncertaintySet(tau, lam, provenance)

    if anchor is None:
        anchor_X = X
    else:
        anchor_X = np.atleast_2d(np.asarray(anchor, dtype=float))
        if stats is not None:
            anchor_X = (anchor_X - stats.mean) / stats.std

    notices = []
    if repair == "always":
        unc, changed = _repair(unc, anchor_X, spec)
        if changed:
            notices.append("uncertainty set repaired up front")
            log.info("feasibility repair adjusted the uncertainty set")

    def build(u):
        if variant == "fixed_marginal":
            return objective.build_fixed_marginal_problem(u, anchor_X, spec)
        if spec.num_classes > objective.SUBSET_ENUMERATION_CAP:
            return objective.build_learning_objective_topk(u, anchor_X, spec)
        return objective.build_learning_problem(u, anchor_X, spec)

    problem = build(unc)
    try:
        run = solve(problem, solver_config)
    except (UnboundedObjectiveError, DivergenceError) as exc:
        if repair != "auto":
            raise
        log.warning("learning solve failed (%s); repairing the uncertainty set", exc)
        notices.append(f"repaired after: {exc}")
        unc, _ = _repair(unc, anchor_X, spec)
        problem = build(unc)
        run = solve(problem, solver_config)

    mu_star = run.best_mu
    phi_star = objective.phi(mu_star, anchor_X, spec)
    upper_raw = run.best_value
    solver_info = {
        "method": run.method,
        "status": run.status,
        "iterations": run.iterations_done,
        "upper_certificate": run.certificate,
        "notices": notices,
    }
    raw_bounds = {"upper": upper_raw}

    lower = None
    mu_lower = None
    if compute_lower and variant == "standard":
        h_rule = _rule_matrix_from_scores(
            features.score_matrix(spec, anchor_X, mu_star), phi_star,
            spec.num_classes)
        low_problem = objective.build_lower_bound_problem(unc, anchor_X, spec, h_rule)
        low_run = solve(low_problem, solver_config)
        lower_raw = low_problem.reported_value(low_run.best_value)
        raw_bounds["lower"] = lower_raw
        lower = _clamp(lower_raw)
        mu_lower = low_run.best_mu
        solver_info["lower_certificate"] = low_run.certificate

    return MrcModel(
        mu_star=mu_star, phi_star=phi_star,
        minimax_risk=_clamp(upper_raw), lower_bound=lower,
        uncertainty=unc, feature_spec=spec, normalization=stats,
        instance_anchor=anchor_X, label_names=data.label_names,
        variant=variant, mu_lower=mu_lower, raw_bounds=raw_bounds,
        solver_info=solver_info, training_trace=run.trace,
    )


def _repair(unc, anchor_X, spec):
    tau2, lam2 = estimate.ensure_feasible(unc.tau, unc.lam, anchor_X, spec)
    changed = not (np.array_equal(tau2, unc.tau) and np.array_equal(lam2, unc.lam))
    prov = dict(unc.provenance)
    prov["repaired"] = changed
    return estimate.UncertaintySet(tau2, lam2, prov), changed


def _rule_matrix_from_scores(scores, phi_star, num_classes):
    """Randomized rule values h(y|x) row-wise from per-label scores."""
    raw = np.maximum(scores - phi_star, 0.0)
    c = raw.sum(axis=1, keepdims=True)
    h = np.full_like(raw, 1.0 / num_classes)
    np.divide(raw, c, out=h, where=c > EPS_NUM)
    return h


def predict_proba(model, X):
    """Label distribution of the randomized rule at each instance.

    Rows sum to 1; if every score falls below the support-function value the
    rule backs off to uniform.
    """
    if model.variant == "fixed_marginal":
        return fixed_marginal_proba(model, X)
    Xn = _normalize_instances(model, X)
    scores = features.score_matrix(model.feature_spec, Xn, model.mu_star)
    return _rule_matrix_from_scores(scores, model.phi_star, model.num_classes)


def rule_normalizer(model, X):
    """The per-instance normalization constant of the randomized rule."""
    Xn = _normalize_instances(model, X)
    scores = features.score_matrix(model.feature_spec, Xn, model.mu_star)
    return np.maximum(scores - model.phi_star, 0.0).sum(axis=1)


def fixed_marginal_proba(model, X):
    """Rule of the fixed-instance-marginal variant (per-instance support value)."""
    if model.variant != "fixed_marginal":
        raise ValueError("model was not trained with the fixed_marginal variant")
    Xn = _normalize_instances(model, X)
    scores = features.score_matrix(model.feature_spec, Xn, model.mu_star)
    phi_x = objective.phi_per_instance(scores)
    h = np.maximum(scores - phi_x[:, None], 0.0)
    sums = h.sum(axis=1)
    off = np.abs(sums - 1.0) > 1e-9
    if np.any(off):
        log.warning("renormalizing %d rule rows that summed off 1 by >1e-9",
                    int(off.sum()))
        h[off] /= sums[off, None]
    return h


def predict(model, X):
    """Deterministic rule: the label with the largest score (ties to smallest)."""
    Xn = _normalize_instances(model, X)
    scores = features.score_matrix(model.feature_spec, Xn, model.mu_star)
    return np.argmax(scores, axis=1) + 1


def evaluate(model, test):
    """Randomized risk and deterministic error on a held-out Dataset."""
    if test.n == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    h = predict_proba(model, test.instances)
    rows = np.arange(test.n)
    randomized = float(np.mean(1.0 - h[rows, test.labels - 1]))
    deterministic = float(np.mean(predict(model, test.instances) != test.labels))
    return {"randomized_risk": randomized, "deterministic_error": deterministic}


@dataclass
class RuleBounds:
    lower: float
    upper: float
    lower_raw: float
    upper_raw: float
    lower_certificate: str
    upper_certificate: str
    mu_lower: np.ndarray
    mu_upper: np.ndarray


def bounds_for_rule(uncertainty, instances, spec, h, solver_config=None):
    """Certified lower/upper bounds on the expected loss of an arbitrary rule.

    `h` holds the rule evaluations h(y|x) as an (instances, classes) matrix.
    """
    if solver_config is None:
        solver_config = SolverConfig()
    low = objective.build_lower_bound_problem(uncertainty, instances, spec, h)
    high = objective.build_upper_bound_problem(uncertainty, instances, spec, h)
    low_run = solve(low, solver_config)
    high_run = solve(high, solver_config)
    lower_raw = low.reported_value(low_run.best_value)
    upper_raw = high_run.best_value
    return RuleBounds(
        lower=_clamp(lower_raw), upper=_clamp(upper_raw),
        lower_raw=lower_raw, upper_raw=upper_raw,
        lower_certificate=low_run.certificate,
        upper_certificate=high_run.certificate,
        mu_lower=low_run.best_mu, mu_upper=high_run.best_mu,
    )


def deterministic_rule_matrix(model, instances_normalized):
    """One-hot matrix of the deterministic rule over normalized instances."""
    scores = features.score_matrix(model.feature_spec, instances_normalized,
                                   model.mu_star)
    h = np.zeros_like(scores)
    h[np.arange(scores.shape[0]), np.argmax(scores, axis=1)] = 1.0
    return h


def randomized_rule_matrix(model, instances_normalized):
    scores = features.score_matrix(model.feature_spec, instances_normalized,
                                   model.mu_star)
    if model.variant == "fixed_marginal":
        phi_x = objective.phi_per_instance(scores)
        return np.maximum(scores - phi_x[:, None], 0.0)
    return _rule_matrix_from_scores(scores, model.phi_star, model.num_classes)


@dataclass
class HighConfidenceBounds:
    lower: float
    upper: float
    lower_raw: float
    upper_raw: float


def high_confidence_bounds(model, lambda_delta, mu_lower=None):
    """Widen the learning-time bounds to a coverage-level confidence vector.

    lambda_delta must dominate the training confidence vector component-wise;
    the interval endpoints move by the weighted L1 norms of the two solution
    vectors.
    """
    lam = model.uncertainty.lam
    lambda_delta = np.asarray(lambda_delta, dtype=float)
    if lambda_delta.shape != lam.shape:
        raise ValueError("lambda_delta has the wrong length")
    if np.any(lambda_delta < lam - 1e-12):
        raise ValueError("lambda_delta must dominate the training lambda")
    if mu_lower is None:
        mu_lower = model.mu_lower
    if mu_lower is None or model.lower_bound is None:
        raise ValueError("model carries no lower-bound solve")
    gap = lambda_delta - lam
    hi_raw = model.minimax_risk + float(gap @ np.abs(model.mu_star))
    lo_raw = model.lower_bound - float(gap @ np.abs(mu_lower))
    return HighConfidenceBounds(
        lower=_clamp(lo_raw), upper=_clamp(hi_raw),
        lower_raw=lo_raw, upper_raw=hi_raw,
    )


@dataclass
class DiagnosticsReport:
    upper_correction: float
    lower_correction: float
    covered: bool
    corrected_upper: float
    corrected_lower: float


def diagnostics(model, tau_inf):
    """Generalization diagnostics against a known exact expectation vector.

    Oracle mode only: reports the corrections that turn the learning-time
    bounds into bounds on the true error probability, plus whether the
    confidence vector covers the estimation error.
    """
    tau_inf = np.asarray(tau_inf, dtype=float)
    unc = model.uncertainty
    if tau_inf.shape != unc.tau.shape:
        raise ValueError("tau_inf has the wrong length")
    err = np.abs(tau_inf - unc.tau)
    gap = err - unc.lam
    upper_corr = float(gap @ np.abs(model.mu_star))
    lower_corr = float(gap @ np.abs(model.mu_lower)) if model.mu_lower is not None else math.nan
    covered = bool(np.all(err <= unc.lam + 1e-12))
    lower = model.lower_bound if model.lower_bound is not None else math.nan
    return DiagnosticsReport(
        upper_correction=upper_corr, lower_correction=lower_corr,
        covered=covered,
        corrected_upper=model.minimax_risk + upper_corr,
        corrected_lower=lower - lower_corr,
    )


def exact_risk_finite(model, X, y, prob):
    """Expected loss of the model's randomized rule under a finite distribution."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    prob = np.asarray(prob, dtype=float)
    if np.any(prob < 0) or abs(prob.sum() - 1.0) > 1e-12:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    h = predict_proba(model, X)
    return float(prob @ (1.0 - h[np.arange(X.shape[0]), y - 1]))


def epsilon_s(num_instances, m, num_classes, delta):
    """Approximation-error rate of a size-s anchor pool (vacuous for small s)."""
    if num_instances < 1:
        raise ValueError("need at least one instance")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    s = num_instances
    inner = (4.0 + num_classes * (m + 1) * math.log(s)
             + math.log(num_classes / delta)) / s
    return 6.0 * num_classes * math.sqrt(inner)


def save_model(model, path):
    """Serialize to versioned JSON (frequencies regenerate from the seed)."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "variant": model.variant,
        "mu_star": model.mu_star.tolist(),
        "phi_star": model.phi_star,
        "minimax_risk": model.minimax_risk,
        "lower_bound": model.lower_bound,
        "mu_lower": None if model.mu_lower is None else model.mu_lower.tolist(),
        "tau": model.uncertainty.tau.tolist(),
        "lambda": model.uncertainty.lam.tolist(),
        "provenance": model.uncertainty.provenance,
        "feature_spec": features.spec_to_dict(model.feature_spec),
        "normalization": None if model.normalization is None else {
            "mean": model.normalization.mean.tolist(),
            "std": model.normalization.std.tolist(),
        },
        "instance_anchor": model.instance_anchor.tolist(),
        "label_names": list(model.label_names),
        "raw_bounds": model.raw_bounds,
        "solver_info": model.solver_info,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {payload.get('format_version')!r}")
    norm = payload["normalization"]
    stats = None
    if norm is not None:
        stats = NormalizationStats(np.array(norm["mean"]), np.array(norm["std"]))
    mu_lower = payload["mu_lower"]
    return MrcModel(
        mu_star=np.array(payload["mu_star"], dtype=float),
        phi_star=payload["phi_star"],
        minimax_risk=payload["minimax_risk"],
        lower_bound=payload["lower_bound"],
        uncertainty=estimate.UncertaintySet(
            np.array(payload["tau"], dtype=float),
            np.array(payload["lambda"], dtype=float),
            payload.get("provenance", {}),
        ),
        feature_spec=features.spec_from_dict(payload["feature_spec"]),
        normalization=stats,
        instance_anchor=np.array(payload["instance_anchor"], dtype=float),
        label_names=tuple(payload["label_names"]),
        variant=payload["variant"],
        mu_lower=None if mu_lower is None else np.array(mu_lower, dtype=float),
        raw_bounds=payload.get("raw_bounds", {}),
        solver_info=payload.get("solver_info", {}),
    )
