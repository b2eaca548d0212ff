"""MLP diagonal-Gaussian VAE: the frozen host model that scoring and
retraining are built around.

Architecture: encoder (w*d -> hidden, tanh) with linear mean / log-variance
heads of size m; decoder (m -> hidden, tanh) with heads of size w*d. Both
log-variance heads are clamped to [LOG_VAR_MIN, LOG_VAR_MAX]. All gradients
are hand-derived and checked against central finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from driftfit import kernels
from driftfit.errors import FitError, NumericError, ShapeError
from driftfit.numerics import (
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    AdamState,
    GaussianDiag,
    Rng,
    clamp_log_var,
    gaussian_diag_logpdf,
    make_rng,
)

FORMAT_VERSION = 1  # bumped when the parameter layout changes


class ParamViews(NamedTuple):
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_wm: np.ndarray
    enc_bm: np.ndarray
    enc_wv: np.ndarray
    enc_bv: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_wm: np.ndarray
    dec_bm: np.ndarray
    dec_wv: np.ndarray
    dec_bv: np.ndarray


def _shapes(n_in: int, hidden: int, latent: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("enc_w1", (n_in, hidden)),
        ("enc_b1", (hidden,)),
        ("enc_wm", (hidden, latent)),
        ("enc_bm", (latent,)),
        ("enc_wv", (hidden, latent)),
        ("enc_bv", (latent,)),
        ("dec_w1", (latent, hidden)),
        ("dec_b1", (hidden,)),
        ("dec_wm", (hidden, n_in)),
        ("dec_bm", (n_in,)),
        ("dec_wv", (hidden, n_in)),
        ("dec_bv", (n_in,)),
    ]


def param_count(n_in: int, hidden: int, latent: int) -> int:
    return sum(math.prod(s) for _, s in _shapes(n_in, hidden, latent))


@dataclass
class VaeModel:
    """All parameters live in one flat float64 vector; named views are
    zero-copy reshapes. Treat models as immutable after construction."""

    window: int
    channels: int
    hidden: int
    latent: int
    params: np.ndarray
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        expected = param_count(self.input_dim, self.hidden, self.latent)
        if self.params.shape != (expected,):
            raise ShapeError(
                f"vae.VaeModel: parameter vector has {self.params.shape}, expected ({expected},)"
            )

    @property
    def input_dim(self) -> int:
        return self.window * self.channels

    def views(self, params: np.ndarray | None = None) -> ParamViews:
        flat = self.params if params is None else params
        out = []
        off = 0
        for _, shape in _shapes(self.input_dim, self.hidden, self.latent):
            n = math.prod(shape)
            out.append(flat[off:off + n].reshape(shape))
            off += n
        return ParamViews(*out)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: int = 32
    latent: int = 8
    n_mc: int = 1

    def __post_init__(self):
        if min(self.epochs + 1, self.batch_size, self.hidden, self.latent, self.n_mc) < 1 \
                or self.learning_rate <= 0:
            raise ValueError("vae.TrainConfig: all fields must be positive")


def init_vae(window: int, channels: int, cfg: TrainConfig) -> VaeModel:
    """Glorot-uniform weights (seeded), zero biases."""
    rng = make_rng(cfg.seed)
    n_in = window * channels
    flat = np.zeros(param_count(n_in, cfg.hidden, cfg.latent))
    model = VaeModel(window, channels, cfg.hidden, cfg.latent, flat)
    pv = model.views()
    for w in (pv.enc_w1, pv.enc_wm, pv.enc_wv, pv.dec_w1, pv.dec_wm, pv.dec_wv):
        fan_in, fan_out = w.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return model


def _as_batch(x: np.ndarray, dim: int, op: str) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"vae.{op}: input has shape {x.shape}, expected (*, {dim})")
    return x


def encode_batch(model: VaeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters for a batch of windows; returns (mean, log_var)."""
    x = _as_batch(x, model.input_dim, "encode")
    pv = model.views()
    _, mean, log_var = kernels.gauss_mlp_forward(
        x, pv.enc_w1, pv.enc_b1, pv.enc_wm, pv.enc_bm, pv.enc_wv, pv.enc_bv)
    return mean, clamp_log_var(log_var)


def decode_batch(model: VaeModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction distribution parameters for a batch of latents."""
    z = _as_batch(z, model.latent, "decode")
    pv = model.views()
    _, mean, log_var = kernels.gauss_mlp_forward(
        z, pv.dec_w1, pv.dec_b1, pv.dec_wm, pv.dec_bm, pv.dec_wv, pv.dec_bv)
    return mean, clamp_log_var(log_var)


def encode(model: VaeModel, x: np.ndarray) -> GaussianDiag:
    mean, log_var = encode_batch(model, x)
    return GaussianDiag(mean[0], log_var[0])


def decode(model: VaeModel, z: np.ndarray) -> GaussianDiag:
    mean, log_var = decode_batch(model, z)
    return GaussianDiag(mean[0], log_var[0])


def reconstruct(model: VaeModel, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Deterministic reconstruction (decoder mean at the encoder mean) and its
    log-likelihood under the decoder distribution."""
    g_x = decode(model, encode(model, x).mean)
    ll = gaussian_diag_logpdf(np.asarray(x, dtype=np.float64), g_x)
    return g_x.mean.copy(), ll


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"vae.elbo_loss: non-finite values in {where}")


def elbo_batch(model: VaeModel, x: np.ndarray, rng: Rng,
               n_mc: int = 1) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean negative ELBO over a batch plus the gradient w.r.t. all parameters.

    Loss per row: -E_q[log p(x|z)] (n_mc reparameterized samples) plus the
    closed-form KL(q(z|x) || N(0, I)). Returns (loss, grad, per_row_losses).
    """
    x = _as_batch(x, model.input_dim, "elbo_loss")
    batch = x.shape[0]
    pv = model.views()
    grad_flat = np.zeros_like(model.params)
    gv = model.views(grad_flat)

    enc_h, mu, lv_raw = kernels.gauss_mlp_forward(
        x, pv.enc_w1, pv.enc_b1, pv.enc_wm, pv.enc_bm, pv.enc_wv, pv.enc_bv)
    _check_finite(mu, "encoder mean head")
    _check_finite(lv_raw, "encoder log-var head")
    lv = clamp_log_var(lv_raw)
    enc_mask = (lv_raw > LOG_VAR_MIN) & (lv_raw < LOG_VAR_MAX)
    sig = np.exp(0.5 * lv)

    # KL(q || N(0,I)) in closed form, and its gradient contributions.
    kl_rows = 0.5 * (mu * mu + np.exp(lv) - lv - 1.0).sum(axis=1)
    d_mu = mu / batch
    d_lv = 0.5 * (np.exp(lv) - 1.0) / batch

    recon_rows = np.zeros(batch)
    scale = 1.0 / (batch * n_mc)
    for _ in range(n_mc):
        eps = rng.standard_normal(mu.shape)
        z = mu + sig * eps
        dec_h, xm, xlv_raw = kernels.gauss_mlp_forward(
            z, pv.dec_w1, pv.dec_b1, pv.dec_wm, pv.dec_bm, pv.dec_wv, pv.dec_bv)
        _check_finite(xm, "decoder mean head")
        _check_finite(xlv_raw, "decoder log-var head")
        xlv = clamp_log_var(xlv_raw)
        dec_mask = (xlv_raw > LOG_VAR_MIN) & (xlv_raw < LOG_VAR_MAX)

        recon_rows += kernels.gaussian_logpdf_pairs(x, xm, xlv) / n_mc

        # d(-log p)/d mean and /d log-var of the decoder heads
        diff = xm - x
        inv_var = np.exp(-xlv)
        d_xm = diff * inv_var * scale
        d_xlv = (0.5 - 0.5 * diff * diff * inv_var) * scale
        d_xlv *= dec_mask

        dzw1, dzb1, dzwm, dzbm, dzwv, dzbv, dz = kernels.gauss_mlp_backward(
            z, dec_h, d_xm, d_xlv, pv.dec_w1, pv.dec_wm, pv.dec_wv)
        gv.dec_w1[...] += dzw1
        gv.dec_b1[...] += dzb1
        gv.dec_wm[...] += dzwm
        gv.dec_bm[...] += dzbm
        gv.dec_wv[...] += dzwv
        gv.dec_bv[...] += dzbv

        # reparameterization: z = mu + exp(lv/2) * eps
        d_mu += dz
        d_lv += dz * eps * 0.5 * sig

    d_lv *= enc_mask
    dew1, deb1, dewm, debm, dewv, debv, _ = kernels.gauss_mlp_backward(
        x, enc_h, d_mu, d_lv, pv.enc_w1, pv.enc_wm, pv.enc_wv)
    gv.enc_w1[...] += dew1
    gv.enc_b1[...] += deb1
    gv.enc_wm[...] += dewm
    gv.enc_bm[...] += debm
    gv.enc_wv[...] += dewv
    gv.enc_bv[...] += debv

    row_losses = kl_rows - recon_rows
    loss = float(row_losses.mean())
    if not np.isfinite(loss):
        raise NumericError("vae.elbo_loss: non-finite loss")
    return loss, grad_flat, row_losses


def elbo_loss(model: VaeModel, x: np.ndarray, rng: Rng,
              n_mc: int = 1) -> tuple[float, np.ndarray]:
    """Negative ELBO of a single window and its parameter gradient."""
    loss, grad, _ = elbo_batch(model, x, rng, n_mc)
    return loss, grad


def train_vae(model: VaeModel, data: np.ndarray | Sequence[np.ndarray],
              cfg: TrainConfig) -> tuple[VaeModel, list[float]]:
    """Adam over seeded shuffled mini-batches, starting from model's current
    parameters (so it doubles as full fine-tuning). Returns the trained model
    and the per-epoch mean loss."""
    windows = _as_batch(np.asarray(data, dtype=np.float64), model.input_dim, "train_vae")
    if windows.shape[0] == 0:
        raise FitError("vae.train_vae: no training windows")
    if cfg.epochs == 0:
        return model, []

    rng = make_rng(cfg.seed)
    params = model.params.copy()
    work = replace(model, params=params)
    adam = AdamState.for_params(params, lr=cfg.learning_rate)
    n = windows.shape[0]
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = windows[order[start:start + cfg.batch_size]]
            loss, grad, _ = elbo_batch(work, batch, rng, cfg.n_mc)
            total += loss * batch.shape[0]
            kernels.adam_step_inplace(params, grad, adam.m, adam.v, adam.step + 1,
                                      adam.lr, adam.beta1, adam.beta2, adam.eps)
            adam.step += 1
        losses.append(total / n)
    return work, losses
