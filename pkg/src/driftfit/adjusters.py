"""Affine adjusters: the only trainable objects during retraining.

An adjuster maps a k-vector to W v + b. Fitting minimizes the mean squared
adjustment error, which for jointly Gaussian (input, target) pairs the affine
family solves optimally -- the conditional-expectation map is itself affine,
so nothing nonlinear can do better. The closed form below is the exact
ridge-regularized least-squares minimizer via normal equations on centered
data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from driftfit.errors import FitError, ShapeError

DEFAULT_RIDGE = 1e-6  # keeps the fit unique when pairs are fewer than dimensions


@dataclass
class AffineAdjuster:
    w: np.ndarray  # (k, k)
    b: np.ndarray  # (k,)

    def __post_init__(self):
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1] \
                or self.b.shape != (self.w.shape[0],):
            raise ShapeError(f"adjusters.AffineAdjuster: W {self.w.shape}, b {self.b.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise FitError("adjusters.AffineAdjuster: non-finite parameters")

    @classmethod
    def identity(cls, k: int) -> "AffineAdjuster":
        return cls(np.eye(k), np.zeros(k))

    @property
    def dim(self) -> int:
        return self.b.shape[0]


@dataclass
class PairSet:
    """Aligned (input, target) vectors used to fit one adjuster."""

    inputs: np.ndarray   # (B, k)
    targets: np.ndarray  # (B, k)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.inputs.shape != self.targets.shape or self.inputs.ndim != 2:
            raise ShapeError(
                f"adjusters.PairSet: inputs {self.inputs.shape} vs targets {self.targets.shape}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def apply_affine(a: AffineAdjuster, v: np.ndarray) -> np.ndarray:
    """W v + b for one vector, or row-wise for a (B, k) batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != a.dim:
        raise ShapeError(f"adjusters.apply_affine: vector dim {v.shape[-1]} != {a.dim}")
    return v @ a.w.T + a.b


def fit_affine_closed_form(pairs: PairSet, ridge: float = DEFAULT_RIDGE) -> AffineAdjuster:
    """Exact minimizer of sum ||W u + b - t||^2 + ridge * ||W||_F^2.

    Solving on centered data gives the joint (W, b) optimum: the optimal b is
    tbar - W ubar for any W, and centering removes it from the W problem.
    """
    if len(pairs) == 0:
        raise FitError("adjusters.fit_affine_closed_form: empty pair set")
    u_bar = pairs.inputs.mean(axis=0)
    t_bar = pairs.targets.mean(axis=0)
    u = pairs.inputs - u_bar
    t = pairs.targets - t_bar
    k = pairs.dim
    cuu = u.T @ u + ridge * np.eye(k)
    cut = u.T @ t
    w = np.linalg.solve(cuu, cut).T
    b = t_bar - w @ u_bar
    return AffineAdjuster(w, b)


def adjust_mse(a: AffineAdjuster, pairs: PairSet) -> float:
    """Mean over pairs of the squared adjustment error ||W u + b - t||^2."""
    if len(pairs) == 0:
        raise FitError("adjusters.adjust_mse: empty pair set")
    r = apply_affine(a, pairs.inputs) - pairs.targets
    return float((r * r).sum(axis=1).mean())
