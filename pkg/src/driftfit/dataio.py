"""Ingestion, windowing, normalization, synthetic shift streams, and
bit-exact state serialization.

CSV schema: header ``timestamp,dim_0,...,dim_{d-1}[,label]``; integer
timestamps strictly increasing; labels, when present, are 0/1 per row.

State files are plain text: a version line, ``key = value`` header fields,
then one ``name = <hex>`` line per parameter tensor where the hex string is
the concatenation of big-endian IEEE-754 words (16 hex chars per float64).
Hex round-trips are bit-exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from driftfit.errors import DataFormatError, ShapeError
from driftfit.numerics import Rng, make_rng
from driftfit.vae import VaeModel

STATE_MAGIC = "driftfit-state v1"


@dataclass
class SeriesFrame:
    """Multivariate series: strictly increasing integer timestamps, a (T, d)
    value matrix, and optional 0/1 anomaly labels."""

    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.timestamps.shape != (self.values.shape[0],):
            raise ShapeError(
                f"dataio.SeriesFrame: {self.timestamps.shape[0]} timestamps for "
                f"values of shape {self.values.shape}")
        if self.timestamps.size > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise DataFormatError("dataio.SeriesFrame: timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DataFormatError("dataio.SeriesFrame: non-finite values")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.values.shape[0],):
                raise ShapeError("dataio.SeriesFrame: label length mismatch")
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise DataFormatError("dataio.SeriesFrame: labels must be 0 or 1")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(
            self.timestamps[start:stop],
            self.values[start:stop],
            None if self.labels is None else self.labels[start:stop],
        )


@dataclass
class WindowSpec:
    w: int = 50
    stride: int = 1

    def __post_init__(self):
        if self.w < 1 or self.stride < 1:
            raise ValueError("dataio.WindowSpec: w and stride must be >= 1")


@dataclass
class NormStats:
    """Per-channel training mean/std; std is floored at 1e-8 when applied."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / np.maximum(self.std, 1e-8)


def zscore_normalize(frame: SeriesFrame,
                     stats: NormStats | None = None) -> tuple[SeriesFrame, NormStats]:
    """Normalize per channel. Without stats, they are computed from this frame
    (the training split); pass training stats to transform later splits."""
    if stats is None:
        stats = NormStats(frame.values.mean(axis=0), frame.values.std(axis=0))
    out = replace(frame, values=stats.transform(frame.values))
    return out, stats


def make_windows(frame: SeriesFrame | np.ndarray,
                 spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows flattened time-major (index = t*d + j).

    Returns (windows (B, w*d), end_indices (B,)) where end_indices[i] is the
    row index of the last timestamp covered by window i.
    """
    values = frame.values if isinstance(frame, SeriesFrame) else np.asarray(frame, dtype=np.float64)
    t_total = values.shape[0]
    if t_total < spec.w:
        raise ShapeError(f"dataio.make_windows: series length {t_total} < window {spec.w}")
    count = (t_total - spec.w) // spec.stride + 1
    dim = spec.w * values.shape[1]
    windows = np.empty((count, dim))
    ends = np.empty(count, dtype=np.int64)
    for i in range(count):
        start = i * spec.stride
        windows[i] = values[start:start + spec.w].reshape(dim)
        ends[i] = start + spec.w - 1
    return windows, ends


# ---------------------------------------------------------------------------
# CSV

def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(frame: SeriesFrame, path: str | Path):
    cols = ["timestamp"] + [f"dim_{j}" for j in range(frame.channels)]
    if frame.labels is not None:
        cols.append("label")
    lines = [",".join(cols)]
    for i in range(frame.length):
        row = [str(int(frame.timestamps[i]))]
        row += [_fmt(v) for v in frame.values[i]]
        if frame.labels is not None:
            row.append(str(int(frame.labels[i])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path) -> SeriesFrame:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"dataio.load_csv: cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataFormatError(f"dataio.load_csv: {path}: empty file")

    header = [h.strip() for h in lines[0].split(",")]
    has_label = header[-1] == "label" if len(header) > 1 else False
    dims = header[1:-1] if has_label else header[1:]
    if header[0] != "timestamp" or not dims or \
            dims != [f"dim_{j}" for j in range(len(dims))]:
        raise DataFormatError(
            f"dataio.load_csv: {path}: row 1: malformed header {lines[0]!r}; "
            "expected timestamp,dim_0,...[,label]")
    d = len(dims)
    width = 1 + d + (1 if has_label else 0)

    n = len(lines) - 1
    timestamps = np.empty(n, dtype=np.int64)
    values = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64) if has_label else None
    prev_ts = None
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width or any(c.strip() == "" for c in cells):
            raise DataFormatError(
                f"dataio.load_csv: {path}: row {i}: expected {width} values, got {line!r}")
        try:
            ts = int(cells[0])
            row = [float(c) for c in cells[1:1 + d]]
            lab = int(cells[-1]) if has_label else None
        except ValueError as exc:
            raise DataFormatError(f"dataio.load_csv: {path}: row {i}: non-numeric cell "
                                  f"in {line!r}") from exc
        if prev_ts is not None and ts <= prev_ts:
            raise DataFormatError(
                f"dataio.load_csv: {path}: row {i}: timestamp {ts} not increasing")
        prev_ts = ts
        timestamps[i - 2] = ts
        values[i - 2] = row
        if has_label:
            if lab not in (0, 1):
                raise DataFormatError(f"dataio.load_csv: {path}: row {i}: label must be 0/1")
            labels[i - 2] = lab
    return SeriesFrame(timestamps, values, labels)


# ---------------------------------------------------------------------------
# Synthetic shift streams

@dataclass
class Regime:
    """One generating regime of the stream."""

    amplitude: float = 1.0
    frequency: float = 0.02   # cycles per time step
    level: float = 0.0
    noise_sigma: float = 0.1


@dataclass
class ShiftSpec:
    """Sinusoid-mixture stream with an abrupt regime change at the changepoint
    and seeded spike/level-shift anomalies at a fixed label rate.

    anomaly_start keeps the first rows clean (fresh post-shift observations
    used for retraining are presumed normal); the label rate applies to the
    remaining rows.
    """

    length: int = 6000
    channels: int = 4
    changepoint: int = 3000
    pre: Regime = field(default_factory=Regime)
    post: Regime = field(default_factory=lambda: Regime(
        amplitude=1.6, frequency=0.028, level=2.5, noise_sigma=0.15))
    anomaly_rate: float = 0.01
    anomaly_magnitude: float = 6.0  # in multiples of the local noise sigma
    anomaly_start: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.length < 2 or self.channels < 1:
            raise ValueError("dataio.ShiftSpec: length and channels must be positive")
        if not 0 < self.changepoint < self.length:
            raise ValueError("dataio.ShiftSpec: changepoint must lie inside the series")
        if not 0.0 < self.anomaly_rate < 0.2:
            raise ValueError("dataio.ShiftSpec: anomaly_rate must be in (0, 0.2)")
        if not 0 <= self.anomaly_start < self.length:
            raise ValueError("dataio.ShiftSpec: anomaly_start must lie inside the series")


# Streams alternate between a few discrete operating modes (think workload
# regimes on a monitored service). Each mode recolors the carrier: its own
# frequency multiplier, phase offset and harmonic mix. Mode segments last
# 80-160 rows, so a short span of fresh observations sees one or two modes
# while a training-scale span sees them all.
_MODE_FREQ = (1.0, 1.45, 0.62, 2.1)
_MODE_PHASE = (0.0, 1.3, 2.1, 3.4)
_MODE_HARMONIC = (0.35, 0.55, 0.2, 0.65)


def _mode_sequence(length: int, rng) -> np.ndarray:
    modes = np.empty(length, dtype=np.int64)
    pos = 0
    while pos < length:
        seg = int(rng.integers(80, 160))
        modes[pos:pos + seg] = int(rng.integers(0, len(_MODE_FREQ)))
        pos += seg
    return modes


def _carrier(t: np.ndarray, modes: np.ndarray, base_freq: float, channels: int) -> np.ndarray:
    out = np.empty((t.shape[0], channels))
    freq_mult = np.asarray(_MODE_FREQ)[modes]
    phase_off = np.asarray(_MODE_PHASE)[modes]
    harmonic = np.asarray(_MODE_HARMONIC)[modes]
    for j in range(channels):
        phase = 2.0 * np.pi * j / channels + phase_off
        freq = base_freq * (1.0 + 0.37 * j) * freq_mult
        out[:, j] = (
            np.sin(2.0 * np.pi * freq * t + phase)
            + harmonic * np.sin(2.0 * np.pi * 2.3 * freq * t + 1.7 * phase + 0.9)
        )
    return out


def synth_shift_stream(spec: ShiftSpec) -> SeriesFrame:
    rng = make_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    tc = spec.changepoint
    modes = _mode_sequence(spec.length, rng)
    values = np.empty((spec.length, spec.channels))
    values[:tc] = spec.pre.amplitude * _carrier(
        t[:tc], modes[:tc], spec.pre.frequency, spec.channels) + spec.pre.level
    values[tc:] = spec.post.amplitude * _carrier(
        t[tc:], modes[tc:], spec.post.frequency, spec.channels) + spec.post.level
    noise = rng.standard_normal(values.shape)
    values[:tc] += spec.pre.noise_sigma * noise[:tc]
    values[tc:] += spec.post.noise_sigma * noise[tc:]

    labels = np.zeros(spec.length, dtype=np.int64)
    budget = int(round(spec.anomaly_rate * (spec.length - spec.anomaly_start)))
    placed = 0
    attempts = 0
    while placed < budget and attempts < 10000:
        attempts += 1
        start = int(rng.integers(spec.anomaly_start, spec.length))
        seg = int(min(rng.integers(1, 6), budget - placed, spec.length - start))
        if seg < 1 or labels[start:start + seg].any():
            continue
        sigma = spec.pre.noise_sigma if start < tc else spec.post.noise_sigma
        mask = rng.random(spec.channels) < 0.7
        if not mask.any():
            mask[int(rng.integers(0, spec.channels))] = True
        sign = 1.0 if rng.random() < 0.5 else -1.0
        delta = sign * spec.anomaly_magnitude * sigma * (0.75 + 0.5 * rng.random())
        if rng.random() < 0.5:  # spike: jittered per point
            bump = delta * (1.0 + 0.2 * rng.standard_normal((seg, 1)))
        else:  # short level shift
            bump = np.full((seg, 1), delta)
        values[start:start + seg] += bump * mask
        labels[start:start + seg] = 1
        placed += seg
    return SeriesFrame(np.arange(spec.length, dtype=np.int64), values, labels)


# ---------------------------------------------------------------------------
# State serialization

def _encode_floats(arr: np.ndarray) -> str:
    return np.ascontiguousarray(arr, dtype=np.float64).astype(">f8").tobytes().hex().upper()


def _decode_floats(text: str, path, key: str) -> np.ndarray:
    if len(text) % 16 != 0:
        raise DataFormatError(f"dataio.load_state: {path}: tensor {key} has truncated hex")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise DataFormatError(f"dataio.load_state: {path}: tensor {key} has malformed hex") from exc
    return np.frombuffer(raw, dtype=">f8").astype(np.float64)


def _state_fields(obj) -> tuple[dict, dict]:
    from driftfit.retrain import DetectorState

    if isinstance(obj, VaeModel):
        header = {"kind": "vae", "window": obj.window, "channels": obj.channels,
                  "hidden": obj.hidden, "latent": obj.latent}
        return header, {"vae.params": obj.params}
    if isinstance(obj, DetectorState):
        header = {
            "kind": "detector",
            "window": obj.vae.window, "channels": obj.vae.channels,
            "hidden": obj.vae.hidden, "latent": obj.vae.latent,
            "generation": obj.generation, "mx_input": obj.mx_input,
            "replay.n_replay": obj.replay_cfg.n_replay,
            "replay.n_mc": obj.replay_cfg.n_mc,
            "replay.seed": obj.replay_cfg.seed,
        }
        tensors = {
            "vae.params": obj.vae.params,
            "mz.w": obj.m_z.w, "mz.b": obj.m_z.b,
            "mx.w": obj.m_x.w, "mx.b": obj.m_x.b,
        }
        if obj.norm is not None:
            tensors["norm.mean"] = obj.norm.mean
            tensors["norm.std"] = obj.norm.std
        return header, tensors
    raise ShapeError(f"dataio.serialize_state: unsupported object {type(obj).__name__}")


def serialize_state(obj, path: str | Path):
    """Write a VaeModel or DetectorState; round trip is bit-exact."""
    header, tensors = _state_fields(obj)
    lines = [STATE_MAGIC]
    lines += [f"{k} = {v}" for k, v in header.items()]
    lines += [f"{k} = {_encode_floats(v)}" for k, v in tensors.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _require(fields: dict, key: str, path) -> str:
    if key not in fields:
        raise DataFormatError(f"dataio.load_state: {path}: missing field {key!r} (truncated file?)")
    return fields[key]


def load_state(path: str | Path):
    """Read back a VaeModel or DetectorState written by serialize_state."""
    from driftfit.adjusters import AffineAdjuster
    from driftfit.replay import ReplayConfig
    from driftfit.retrain import DetectorState

    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"dataio.load_state: cannot read {path}: {exc}") from exc
    if not lines or lines[0] != STATE_MAGIC:
        found = lines[0] if lines else ""
        raise DataFormatError(
            f"dataio.load_state: {path}: version mismatch: {found!r} != {STATE_MAGIC!r}")
    fields = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if " = " not in line:
            raise DataFormatError(f"dataio.load_state: {path}: row {i}: expected 'key = value'")
        key, value = line.split(" = ", 1)
        fields[key] = value

    try:
        window = int(_require(fields, "window", path))
        channels = int(_require(fields, "channels", path))
        hidden = int(_require(fields, "hidden", path))
        latent = int(_require(fields, "latent", path))
    except ValueError as exc:
        raise DataFormatError(f"dataio.load_state: {path}: non-integer header field") from exc
    kind = _require(fields, "kind", path)
    params = _decode_floats(_require(fields, "vae.params", path), path, "vae.params")
    try:
        vae = VaeModel(window, channels, hidden, latent, params)
    except ShapeError as exc:
        raise DataFormatError(f"dataio.load_state: {path}: {exc}") from exc

    if kind == "vae":
        return vae
    if kind != "detector":
        raise DataFormatError(f"dataio.load_state: {path}: unknown kind {kind!r}")

    dim = window * channels
    def tensor(key: str, size: int, shape) -> np.ndarray:
        arr = _decode_floats(_require(fields, key, path), path, key)
        if arr.size != size:
            raise DataFormatError(
                f"dataio.load_state: {path}: tensor {key} has {arr.size} values, expected {size}")
        return arr.reshape(shape)

    norm = None
    if "norm.mean" in fields:
        norm = NormStats(tensor("norm.mean", channels, (channels,)),
                         tensor("norm.std", channels, (channels,)))
    try:
        cfg = ReplayConfig(n_replay=int(_require(fields, "replay.n_replay", path)),
                           n_mc=int(_require(fields, "replay.n_mc", path)),
                           seed=int(_require(fields, "replay.seed", path)))
        generation = int(_require(fields, "generation", path))
    except ValueError as exc:
        raise DataFormatError(f"dataio.load_state: {path}: non-integer header field") from exc
    return DetectorState(
        vae=vae,
        m_z=AffineAdjuster(tensor("mz.w", latent * latent, (latent, latent)),
                           tensor("mz.b", latent, (latent,))),
        m_x=AffineAdjuster(tensor("mx.w", dim * dim, (dim, dim)),
                           tensor("mx.b", dim, (dim,))),
        generation=generation,
        replay_cfg=cfg,
        mx_input=_require(fields, "mx_input", path),
        norm=norm,
    )
