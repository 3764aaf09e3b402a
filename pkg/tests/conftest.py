"""Shared builders for synthetic data and randomized problems."""

import numpy as np
import pytest

from mrckit import features, estimate, objective
from mrckit.dataset import Dataset


def make_blobs(n, d=2, num_classes=2, spread=1.0, sep=3.0, seed=0):
    """Gaussian blobs, one per class, centers sep apart on a simplex-ish layout."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(num_classes, d))
    centers = sep * centers / np.linalg.norm(centers, axis=1, keepdims=True)
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    X, y = [], []
    for c in range(num_classes):
        X.append(centers[c] + spread * rng.normal(size=(counts[c], d)))
        y.extend([c + 1] * counts[c])
    return Dataset(np.vstack(X), np.array(y, dtype=np.int64),
                   tuple(str(c + 1) for c in range(num_classes)))


def random_learning_problem(seed, n=40, d=3, num_classes=2, lambda0=0.3,
                            kind="identity", D=8):
    """A materialized learning problem from synthetic data (benign scaling)."""
    ds = make_blobs(n, d=d, num_classes=num_classes, seed=seed)
    X = ds.instances
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    if kind == "identity":
        spec = features.identity_spec(num_classes, d)
    else:
        spec = features.rff_spec(num_classes, d, D=D, seed=seed)
    tau, var = estimate.mean_vector(X, ds.labels, spec)
    lam = estimate.lambda_practical(lambda0, var, n)
    unc = estimate.UncertaintySet(tau, lam)
    problem = objective.build_learning_problem(unc, X, spec)
    return problem, unc, X, ds.labels, spec


def enumerate_phi(mu, instances, spec):
    """Brute-force support function over all nonempty label subsets."""
    scores = features.score_matrix(spec, np.atleast_2d(instances), mu)
    K = spec.num_classes
    best = -np.inf
    for row in scores:
        for mask in range(1, 2 ** K):
            members = [c for c in range(K) if mask >> c & 1]
            val = (sum(row[c] for c in members) - 1.0) / len(members)
            best = max(best, val)
    return best


def finite_distribution(seed, support_size=20, d=2, num_classes=2):
    """A random finite distribution over (instance, label) pairs."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(support_size, d))
    pairs_x = np.repeat(np.arange(support_size), num_classes)
    pairs_y = np.tile(np.arange(1, num_classes + 1), support_size)
    w = rng.exponential(size=pairs_x.size)
    prob = w / w.sum()
    return X, pairs_x, pairs_y, prob


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
