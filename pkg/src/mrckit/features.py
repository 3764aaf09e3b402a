"""Feature mappings from instance-label pairs to real vectors.

A mapping stacks one block of scalar features per class: the block belonging
to the pair's label holds the scalar features of the instance, every other
block is zero. Scalar features are either the raw instance coordinates
("one_hot_identity") or random Fourier cos/sin projections approximating a
Gaussian kernel ("random_fourier"). Frequencies are regenerated from the
stored seed, never serialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KIND_IDENTITY = "one_hot_identity"
KIND_RFF = "random_fourier"

# Gaussian frequency sampling uses numpy's seeded PCG64 generator; the
# generator name is recorded in serialized specs for reproducibility.
RNG_NAME = "numpy-pcg64"


@dataclass
class FeatureMapSpec:
    kind: str
    num_classes: int
    d: int
    D: int | None = None           # number of frequency vectors (random_fourier)
    sigma: float | None = None     # kernel scale, units of normalized instances
    seed: int | None = None
    include_constant: bool = False  # prepend a constant-1 scalar feature
    feature_bound: float | None = None  # C = sup |scalar feature|
    _frequencies: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (KIND_IDENTITY, KIND_RFF):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be at least 1")
        if self.kind == KIND_RFF:
            if self.D is None or self.D < 1:
                raise ValueError("random_fourier requires D >= 1")
            if self.sigma is None:
                self.sigma = default_sigma(self.d)
            if self.sigma <= 0:
                raise ValueError("sigma must be positive")
            if self.seed is None:
                self.seed = 0
            if self.feature_bound is None:
                self.feature_bound = 1.0


def default_sigma(d):
    """Default kernel scale sqrt(d/2) for d-dimensional normalized instances."""
    return math.sqrt(d / 2.0)


def rff_spec(num_classes, d, D=500, sigma=None, seed=0, include_constant=False):
    return FeatureMapSpec(KIND_RFF, num_classes, d, D=D, sigma=sigma, seed=seed,
                          include_constant=include_constant)


def identity_spec(num_classes, d, include_constant=False, feature_bound=None):
    return FeatureMapSpec(KIND_IDENTITY, num_classes, d,
                          include_constant=include_constant,
                          feature_bound=feature_bound)


def block_dim(spec):
    """Number of scalar features per class block."""
    base = spec.d if spec.kind == KIND_IDENTITY else 2 * spec.D
    return base + (1 if spec.include_constant else 0)


def feature_dim(spec):
    """Total mapping dimensionality m = num_classes * block_dim."""
    return spec.num_classes * block_dim(spec)


def frequencies(spec):
    """The (D, d) Gaussian frequency matrix, regenerated from the seed."""
    if spec.kind != KIND_RFF:
        raise ValueError("frequencies are defined only for random_fourier maps")
    if spec._frequencies is None:
        rng = np.random.default_rng(spec.seed)
        spec._frequencies = rng.normal(0.0, 1.0 / spec.sigma, size=(spec.D, spec.d))
    return spec._frequencies


def scalar_feature_matrix(spec, X):
    """Scalar features for every row of X; shape (n, block_dim)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.d:
        raise ValueError(f"instances have dimension {X.shape[1]}, spec expects {spec.d}")
    if spec.kind == KIND_IDENTITY:
        base = X
    else:
        Z = X @ frequencies(spec).T
        base = np.empty((X.shape[0], 2 * spec.D))
        base[:, 0::2] = np.cos(Z)
        base[:, 1::2] = np.sin(Z)
    if spec.include_constant:
        ones = np.ones((base.shape[0], 1))
        base = np.hstack([ones, base])
    return base


def scalar_features(spec, x):
    """Scalar feature vector of a single instance."""
    return scalar_feature_matrix(spec, np.asarray(x, dtype=float).reshape(1, -1))[0]


def feature_map(spec, x, y):
    """Full mapping of an (instance, label) pair: block y holds the scalars."""
    if not 1 <= y <= spec.num_classes:
        raise ValueError(f"label {y} outside 1..{spec.num_classes}")
    psi = scalar_features(spec, x)
    B = psi.size
    out = np.zeros(spec.num_classes * B)
    out[(y - 1) * B:y * B] = psi
    return out


def score_matrix(spec, X, mu):
    """Per-class scores Phi(x, y)^T mu for every row of X; shape (n, num_classes)."""
    psi = scalar_feature_matrix(spec, X)
    return psi @ np.asarray(mu, dtype=float).reshape(spec.num_classes, -1).T


def block_labels(spec):
    """Owning class (1..K) of each mapping component; shape (m,)."""
    return np.repeat(np.arange(1, spec.num_classes + 1), block_dim(spec))


def feature_bound(spec, X=None):
    """Scalar-feature bound C needed by the confidence-vector formulas.

    Random Fourier features are bounded by 1. For the identity map the bound
    is the largest |x_j| seen in the supplied (training) instances.
    """
    if spec.kind == KIND_RFF:
        return 1.0
    if spec.feature_bound is not None:
        return spec.feature_bound
    if X is None:
        raise ValueError("identity feature bound requires training instances")
    bound = float(np.max(np.abs(X)))
    if spec.include_constant:
        bound = max(bound, 1.0)
    return bound


def spec_to_dict(spec):
    return {
        "kind": spec.kind,
        "num_classes": spec.num_classes,
        "d": spec.d,
        "D": spec.D,
        "sigma": spec.sigma,
        "seed": spec.seed,
        "include_constant": spec.include_constant,
        "feature_bound": spec.feature_bound,
        "rng": RNG_NAME if spec.kind == KIND_RFF else None,
    }


def spec_from_dict(payload):
    return FeatureMapSpec(
        kind=payload["kind"],
        num_classes=payload["num_classes"],
        d=payload["d"],
        D=payload.get("D"),
        sigma=payload.get("sigma"),
        seed=payload.get("seed"),
        include_constant=payload.get("include_constant", False),
        feature_bound=payload.get("feature_bound"),
    )
