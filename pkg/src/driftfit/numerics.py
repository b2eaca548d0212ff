"""Deterministic numerical substrate: seeded RNG streams, diagonal Gaussians,
Adam, and a finite-difference gradient checker.

Everything here is pure: sampling is a function of (inputs, generator state),
and generators are single-owner -- they are passed explicitly and never shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from driftfit import kernels
from driftfit.errors import NumericError, ShapeError

# Log-variance clamp applied wherever a network emits a log-variance; keeps
# exp() in density products bounded.
LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

LOG_2PI = math.log(2.0 * math.pi)

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Seeded PCG64 stream; identical seed gives identical draws on any platform."""
    return np.random.Generator(np.random.PCG64(seed))


def child_rng(seed: int, index: int) -> Rng:
    """Independent stream derived from (seed, index), e.g. one per window."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def derive_rng(rng: Rng) -> Rng:
    """Fresh stream seeded from the next draw of rng (order-stable fan-out)."""
    return make_rng(int(rng.integers(0, 2**63)))


def clamp_log_var(log_var: np.ndarray) -> np.ndarray:
    return np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


@dataclass
class GaussianDiag:
    """Diagonal Gaussian given by mean and (clamped) per-coordinate log-variance."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.log_var = clamp_log_var(np.ascontiguousarray(self.log_var, dtype=np.float64))
        if self.mean.shape != self.log_var.shape or self.mean.ndim != 1:
            raise ShapeError(
                f"numerics.GaussianDiag: mean shape {self.mean.shape} "
                f"!= log_var shape {self.log_var.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def gaussian_diag_logpdf(x: np.ndarray, g: GaussianDiag) -> float:
    """Sum over coordinates of the diagonal-Gaussian log-density at x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != g.mean.shape:
        raise ShapeError(f"numerics.gaussian_diag_logpdf: x has length {x.shape}, "
                         f"distribution has {g.mean.shape}")
    return float(kernels.gaussian_logpdf_rows_vs_one(x[None, :], g.mean, g.log_var)[0])


def sample_gaussian_diag(g: GaussianDiag, rng: Rng, n: int | None = None) -> np.ndarray:
    """Draw from g: one vector (n=None) or a stack of n rows."""
    size = g.dim if n is None else (n, g.dim)
    return g.mean + g.std * rng.standard_normal(size)


@dataclass
class AdamState:
    """Adam accumulator for one flat parameter vector."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float = 1e-3) -> "AdamState":
        return cls(lr=lr, m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(params: np.ndarray, grad: np.ndarray, st: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if params.shape != grad.shape or params.shape != st.m.shape:
        raise ShapeError(f"numerics.adam_step: params {params.shape}, grad {grad.shape}, "
                         f"moments {st.m.shape}")
    p = params.copy()
    m = st.m.copy()
    v = st.v.copy()
    kernels.adam_step_inplace(p, np.ascontiguousarray(grad, dtype=np.float64),
                              m, v, st.step + 1, st.lr, st.beta1, st.beta2, st.eps)
    return p, AdamState(lr=st.lr, beta1=st.beta1, beta2=st.beta2, eps=st.eps,
                        step=st.step + 1, m=m, v=v)


def finite_diff_grad_check(f: Callable[[np.ndarray], float], x: np.ndarray,
                           analytic_grad: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between central differences of f and analytic_grad.

    Relative error per coordinate is |fd - g| / max(1, |fd|, |g|).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != np.asarray(analytic_grad).shape:
        raise ShapeError("numerics.finite_diff_grad_check: x and gradient shapes differ")
    fd = np.empty_like(x)
    for j in range(x.size):
        xp = x.copy()
        xp.flat[j] += h
        fp = f(xp)
        xm = x.copy()
        xm.flat[j] -= h
        fm = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"numerics.finite_diff_grad_check: non-finite f at coordinate {j}")
        fd.flat[j] = (fp - fm) / (2.0 * h)
    g = np.asarray(analytic_grad, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(g)))
    return float(np.max(np.abs(fd - g) / denom))
