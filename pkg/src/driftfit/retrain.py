"""Retraining orchestration: build adjustment pairs through generative
replay, fit the affine adjusters (closed form or gradient descent), and score
windows with the frozen model plus its adjusters.

A retraining round never touches the base model's parameters. The loss being
minimized decomposes into the latent-adjustment and reconstruction-adjustment
terms with disjoint parameters, each a convex least-squares problem, so the
gradient-descent and closed-form solvers reach the same optimum.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from driftfit.adjusters import (
    AffineAdjuster,
    PairSet,
    adjust_mse,
    apply_affine,
    fit_affine_closed_form,
)
from driftfit.dataio import NormStats, SeriesFrame, WindowSpec, make_windows
from driftfit.errors import DegenerateWeightsError, FitError, ShapeError
from driftfit.numerics import Rng, make_rng
from driftfit.replay import ReplayConfig, estimate_latent_target, replay_samples
from driftfit.vae import VaeModel, decode_batch, encode_batch

MxInput = Literal["adjusted", "raw"]


@dataclass
class DetectorState:
    """Frozen base VAE plus the adjusters of the current generation.

    mx_input picks what the reconstruction adjuster sees: "adjusted" feeds it
    decodes of the adjusted latent (training input matches the inference
    composition); "raw" feeds it plain decodes of the stale latent.
    """

    vae: VaeModel
    m_z: AffineAdjuster
    m_x: AffineAdjuster
    generation: int = 0
    replay_cfg: ReplayConfig = field(default_factory=ReplayConfig)
    mx_input: MxInput = "adjusted"
    norm: NormStats | None = None

    def __post_init__(self):
        if self.m_z.dim != self.vae.latent or self.m_x.dim != self.vae.input_dim:
            raise ShapeError(
                f"retrain.DetectorState: adjuster dims ({self.m_z.dim}, {self.m_x.dim}) "
                f"do not match model dims ({self.vae.latent}, {self.vae.input_dim})")
        if self.mx_input not in ("adjusted", "raw"):
            raise ValueError(f"retrain.DetectorState: unknown mx_input {self.mx_input!r}")


def new_detector(vae: VaeModel, replay_cfg: ReplayConfig | None = None,
                 mx_input: MxInput = "adjusted", norm: NormStats | None = None) -> DetectorState:
    """Generation-0 state: identity adjusters, scores equal the raw VAE's."""
    return DetectorState(
        vae=vae,
        m_z=AffineAdjuster.identity(vae.latent),
        m_x=AffineAdjuster.identity(vae.input_dim),
        replay_cfg=replay_cfg if replay_cfg is not None else ReplayConfig(),
        mx_input=mx_input,
        norm=norm,
    )


@dataclass
class RetrainReport:
    """What one retraining round did. loss_trajectory[k] is the combined
    adjustment loss after k gradient updates (closed form: the single final
    value)."""

    solver: str
    iterations: int
    seconds: float
    converged: bool
    final_loss_z: float
    final_loss_x: float
    loss_trajectory: np.ndarray

    @property
    def final_loss(self) -> float:
        return self.final_loss_z + self.final_loss_x


def build_retrain_set(state: DetectorState, new_windows: np.ndarray,
                      cfg: ReplayConfig, rng: Rng) -> tuple[PairSet, PairSet]:
    """Replay-based adjustment pairs for a batch of new-distribution windows.

    For each window: the latent pair maps the stale posterior mean to the
    replay-weighted target; the reconstruction pair maps the model's decode
    (through the current latent adjuster when mx_input="adjusted") to the
    observed window. Each window gets its own derived generator stream, so
    results do not depend on processing order.
    """
    windows = np.ascontiguousarray(new_windows, dtype=np.float64)
    if windows.ndim != 2 or windows.shape[0] == 0:
        raise FitError("retrain.build_retrain_set: need at least one window")
    if windows.shape[1] != state.vae.input_dim:
        raise ShapeError(f"retrain.build_retrain_set: window dim {windows.shape[1]} "
                         f"!= model dim {state.vae.input_dim}")
    count = windows.shape[0]
    seeds = rng.integers(0, 2**63, size=count)

    z_old, _ = encode_batch(state.vae, windows)
    z_target = np.empty((count, state.vae.latent))
    for i in range(count):
        wrng = make_rng(int(seeds[i]))
        restored = replay_samples(state.vae, windows[i], cfg.n_replay, wrng)
        try:
            est = estimate_latent_target(state.vae, windows[i], restored, cfg, wrng)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(f"{exc} (window index {i})") from exc
        z_target[i] = est.mean

    z_dec = apply_affine(state.m_z, z_old) if state.mx_input == "adjusted" else z_old
    x_tilde, _ = decode_batch(state.vae, z_dec)
    return PairSet(z_old, z_target), PairSet(x_tilde, windows.copy())


# ---------------------------------------------------------------------------
# Gradient-descent solver

class _QuadStats:
    """Sufficient statistics of the mean squared adjustment loss.

    L(W, b) = tr(W Suu W^T) + 2 b^T W su - 2 tr(W Sut) + |b|^2 - 2 b^T st + stt
    reproduces the per-pair mean exactly, so iteration cost is independent of
    the number of pairs.
    """

    def __init__(self, pairs: PairSet):
        u = pairs.inputs
        t = pairs.targets
        n = u.shape[0]
        self.suu = u.T @ u / n
        self.sut = u.T @ t / n
        self.stu = self.sut.T
        self.su = u.mean(axis=0)
        self.st = t.mean(axis=0)
        self.stt = float((t * t).sum(axis=1).mean())
        self.dim = pairs.dim

    def loss(self, w: np.ndarray, b: np.ndarray) -> float:
        a = w @ self.suu
        return float(
            (a * w).sum() + 2.0 * b @ (w @ self.su) - 2.0 * (w * self.sut.T).sum()
            + b @ b - 2.0 * b @ self.st + self.stt)

    def grad(self, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gw = 2.0 * (w @ self.suu + np.outer(b, self.su) - self.stu)
        gb = 2.0 * (w @ self.su + b - self.st)
        return gw, gb

    def lipschitz(self) -> float:
        """Largest Hessian eigenvalue (shared by every output row)."""
        aug = np.empty((self.dim + 1, self.dim + 1))
        aug[:self.dim, :self.dim] = self.suu
        aug[:self.dim, self.dim] = self.su
        aug[self.dim, :self.dim] = self.su
        aug[self.dim, self.dim] = 1.0
        return 2.0 * float(np.linalg.eigvalsh(aug)[-1])


def _fit_affine_gd(pairs: PairSet, lr: float | None, max_iters: int,
                   tol: float) -> tuple[AffineAdjuster, list[float], bool]:
    """Full-batch gradient descent from the identity adjuster.

    Returns (adjuster, per-iteration losses with losses[0] the initial loss,
    converged flag). lr=None picks 1 / L with L the gradient Lipschitz
    constant, which is always stable.
    """
    stats = _QuadStats(pairs)
    if lr is None:
        lr = 1.0 / stats.lipschitz()
    w = np.eye(pairs.dim)
    b = np.zeros(pairs.dim)
    losses = [stats.loss(w, b)]
    rising = 0
    converged = False
    for _ in range(max_iters):
        gw, gb = stats.grad(w, b)
        w -= lr * gw
        b -= lr * gb
        cur = stats.loss(w, b)
        prev = losses[-1]
        losses.append(cur)
        if cur > prev:
            rising += 1
            if rising >= 10:
                raise FitError(
                    f"retrain.fit_adjusters_gd: loss rose 10 steps in a row (lr={lr:g} too large)")
        else:
            rising = 0
        if abs(prev - cur) <= tol * max(abs(prev), 1e-300):
            converged = True
            break
    return AffineAdjuster(w, b), losses, converged


def _merge_trajectories(a: list[float], b: list[float]) -> np.ndarray:
    n = max(len(a), len(b))
    out = np.empty(n)
    pa = np.array(a + [a[-1]] * (n - len(a)))
    pb = np.array(b + [b[-1]] * (n - len(b)))
    out[:] = pa + pb
    return out


def fit_adjusters_gd(z_pairs: PairSet, x_pairs: PairSet, lr: float | None = None,
                     max_iters: int = 5000, tol: float = 1e-12,
                     ) -> tuple[AffineAdjuster, AffineAdjuster, RetrainReport]:
    """Minimize the combined adjustment loss by gradient descent.

    The two loss terms share no parameters, so each block runs its own
    descent; the reported trajectory is their (padded) sum.
    """
    if len(z_pairs) == 0 or len(x_pairs) == 0:
        raise FitError("retrain.fit_adjusters_gd: empty pair set")
    start = time.perf_counter()
    m_z, traj_z, conv_z = _fit_affine_gd(z_pairs, lr, max_iters, tol)
    m_x, traj_x, conv_x = _fit_affine_gd(x_pairs, lr, max_iters, tol)
    traj = _merge_trajectories(traj_z, traj_x)
    report = RetrainReport(
        solver="gd",
        iterations=len(traj) - 1,
        seconds=time.perf_counter() - start,
        converged=conv_z and conv_x,
        final_loss_z=traj_z[-1],
        final_loss_x=traj_x[-1],
        loss_trajectory=traj,
    )
    return m_z, m_x, report


def retrain(state: DetectorState, new_windows: np.ndarray,
            cfg: ReplayConfig | None = None, rng: Rng | None = None,
            solver: Literal["closed_form", "gd"] = "closed_form",
            lr: float | None = None, max_iters: int = 5000,
            tol: float = 1e-12) -> tuple[DetectorState, RetrainReport]:
    """One full retraining round; returns the next-generation state.

    Pipeline: build pairs -> fit the latent adjuster -> (mx_input="adjusted")
    rebuild reconstruction inputs under the fitted latent adjuster -> fit the
    reconstruction adjuster. The base VAE is shared, not copied: its weights
    are never written.
    """
    cfg = cfg if cfg is not None else state.replay_cfg
    rng = rng if rng is not None else make_rng(cfg.seed)
    start = time.perf_counter()
    z_pairs, x_pairs = build_retrain_set(state, new_windows, cfg, rng)

    if solver == "closed_form":
        m_z = fit_affine_closed_form(z_pairs)
        if state.mx_input == "adjusted":
            x_inputs, _ = decode_batch(state.vae, apply_affine(m_z, z_pairs.inputs))
            x_pairs = PairSet(x_inputs, x_pairs.targets)
        m_x = fit_affine_closed_form(x_pairs)
        loss_z = adjust_mse(m_z, z_pairs)
        loss_x = adjust_mse(m_x, x_pairs)
        report = RetrainReport(
            solver="closed_form", iterations=0,
            seconds=time.perf_counter() - start, converged=True,
            final_loss_z=loss_z, final_loss_x=loss_x,
            loss_trajectory=np.array([loss_z + loss_x]),
        )
    elif solver == "gd":
        m_z, traj_z, conv_z = _fit_affine_gd(z_pairs, lr, max_iters, tol)
        if state.mx_input == "adjusted":
            x_inputs, _ = decode_batch(state.vae, apply_affine(m_z, z_pairs.inputs))
            x_pairs = PairSet(x_inputs, x_pairs.targets)
        m_x, traj_x, conv_x = _fit_affine_gd(x_pairs, lr, max_iters, tol)
        traj = _merge_trajectories(traj_z, traj_x)
        report = RetrainReport(
            solver="gd", iterations=len(traj) - 1,
            seconds=time.perf_counter() - start, converged=conv_z and conv_x,
            final_loss_z=traj_z[-1], final_loss_x=traj_x[-1],
            loss_trajectory=traj,
        )
    else:
        raise ValueError(f"retrain.retrain: unknown solver {solver!r}")

    next_state = DetectorState(
        vae=state.vae, m_z=m_z, m_x=m_x,
        generation=state.generation + 1,
        replay_cfg=cfg, mx_input=state.mx_input, norm=state.norm,
    )
    return next_state, report


# ---------------------------------------------------------------------------
# Scoring

def score_windows(state: DetectorState, windows: np.ndarray) -> np.ndarray:
    """Per-window anomaly scores: mean squared error between the window and
    its adjusted reconstruction."""
    windows = np.ascontiguousarray(windows, dtype=np.float64)
    if windows.ndim == 1:
        windows = windows[None, :]
    if windows.shape[1] != state.vae.input_dim:
        raise ShapeError(f"retrain.score_windows: window dim {windows.shape[1]} "
                         f"!= model dim {state.vae.input_dim}")
    z, _ = encode_batch(state.vae, windows)
    if state.mx_input == "adjusted":
        z = apply_affine(state.m_z, z)
    x_tilde, _ = decode_batch(state.vae, z)
    x_hat = apply_affine(state.m_x, x_tilde)
    diff = x_hat - windows
    return (diff * diff).mean(axis=1)


def score_window(state: DetectorState, x: np.ndarray) -> float:
    return float(score_windows(state, x)[0])


def score_frame(state: DetectorState, frame: SeriesFrame,
                spec: WindowSpec | None = None) -> np.ndarray:
    """Per-timestamp scores for a whole series.

    The state's stored normalization (if any) is applied first. Each
    timestamp takes the score of the latest window ending at or before it;
    leading timestamps take the first window's score.
    """
    spec = spec if spec is not None else WindowSpec(w=state.vae.window)
    if spec.w != state.vae.window:
        raise ShapeError(f"retrain.score_frame: window length {spec.w} "
                         f"!= model window {state.vae.window}")
    values = frame.values if state.norm is None else state.norm.transform(frame.values)
    windows, ends = make_windows(values, spec)
    win_scores = score_windows(state, windows)
    idx = np.searchsorted(ends, np.arange(frame.length), side="right") - 1
    return win_scores[np.clip(idx, 0, len(win_scores) - 1)]
