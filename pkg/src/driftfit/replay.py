"""Generative replay: restore pseudo-historical samples from the frozen model
and estimate each new window's target latent by Monte-Carlo importance
weighting against the prior.

For a new window x, the target latent estimate is

    E[z | x] ~= sum_s w_s z_s,   z_s ~ N(0, I),
    log a_s = log p(x | z_s) + sum_h log p(xbar_h | z_s),
    w_s = softmax(log a_s),

where the likelihoods come from the frozen decoder and xbar_h are the
replayed samples. The replayed likelihood factors are evaluated at the same
integration variable z_s, so historical evidence genuinely reshapes the
weights instead of cancelling from the ratio. All products are accumulated
in log space and normalized with a max-subtraction softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from driftfit import kernels
from driftfit.errors import DegenerateWeightsError, FitError, ShapeError
from driftfit.numerics import Rng
from driftfit.vae import VaeModel, decode, decode_batch, encode

DEFAULT_N_REPLAY = 3
DEFAULT_N_MC = 10


@dataclass
class ReplayConfig:
    n_replay: int = DEFAULT_N_REPLAY  # restored samples per new window
    n_mc: int = DEFAULT_N_MC          # Monte-Carlo draws for the estimate
    seed: int = 0

    def __post_init__(self):
        if self.n_replay < 1 or self.n_mc < 1:
            raise ValueError("replay.ReplayConfig: n_replay and n_mc must be >= 1")


@dataclass
class LatentEstimate:
    """Weighted-mean latent target with per-coordinate variance diagnostics."""

    mean: np.ndarray            # weighted mean of the prior draws
    var: np.ndarray             # E[z_j^2] - E[z_j]^2, floored at 0
    weights: np.ndarray         # normalized importance weights, sum to 1
    weight_entropy: float       # -sum w log w; low values flag weight collapse


def replay_samples(model: VaeModel, x_new: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    """Restore n pseudo-historical windows resembling x_new from the frozen
    model: decode the posterior mean of x_new and sample the decoder
    distribution. Returns an (n, w*d) array."""
    if n < 1:
        raise FitError(f"replay.replay_samples: n must be >= 1, got {n}")
    z_star = encode(model, x_new).mean
    g = decode(model, z_star)
    return g.mean + g.std * rng.standard_normal((n, g.dim))


def estimate_latent_target(model: VaeModel, x_new: np.ndarray, replayed: np.ndarray,
                           cfg: ReplayConfig, rng: Rng) -> LatentEstimate:
    """Monte-Carlo estimate of the target latent for x_new given replayed
    pseudo-historical samples."""
    x_new = np.ascontiguousarray(x_new, dtype=np.float64)
    replayed = np.ascontiguousarray(replayed, dtype=np.float64)
    if replayed.ndim != 2 or replayed.shape[0] == 0:
        raise ShapeError("replay.estimate_latent_target: replayed must be a non-empty (n, w*d) array")
    if replayed.shape[1] != x_new.shape[0]:
        raise ShapeError(
            f"replay.estimate_latent_target: replayed dim {replayed.shape[1]} "
            f"!= window dim {x_new.shape[0]}")

    z = rng.standard_normal((cfg.n_mc, model.latent))
    dec_mean, dec_log_var = decode_batch(model, z)

    log_a = kernels.gaussian_logpdf_one_vs_rows(x_new, dec_mean, dec_log_var)
    for h in range(replayed.shape[0]):
        log_a = log_a + kernels.gaussian_logpdf_one_vs_rows(replayed[h], dec_mean, dec_log_var)

    peak = np.max(log_a)
    if not np.isfinite(peak):
        raise DegenerateWeightsError(
            "replay.estimate_latent_target: all importance weights underflowed")
    w = np.exp(log_a - peak)
    w /= w.sum()

    mean = w @ z
    second = w @ (z * z)
    var = np.maximum(second - mean * mean, 0.0)
    nz = w[w > 0.0]
    entropy = float(-(nz * np.log(nz)).sum())
    return LatentEstimate(mean=mean, var=var, weights=w, weight_entropy=entropy)
