"""Command-line surface.

Subcommands: synth, train, retrain, score, eval, distance, bench. Every
option can also come from a flat ``key = value`` config file (--config);
explicit flags win over the file, the file wins over built-in defaults, and
unknown config keys are usage errors. Each run logs its fully resolved
configuration to stderr so artifacts are reproducible from the log line.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from driftfit import __version__
from driftfit.dataio import (
    NormStats,
    Regime,
    SeriesFrame,
    ShiftSpec,
    WindowSpec,
    load_csv,
    load_state,
    make_windows,
    save_csv,
    serialize_state,
    synth_shift_stream,
    zscore_normalize,
)
from driftfit.errors import DataFormatError, DriftfitError
from driftfit.evaluate import best_f1, evaluate_at_threshold, kde_kl, pot_fit_threshold, transfer_distance
from driftfit.numerics import make_rng
from driftfit.replay import ReplayConfig
from driftfit.retrain import (
    DetectorState,
    build_retrain_set,
    fit_adjusters_gd,
    new_detector,
    retrain,
    score_frame,
)
from driftfit.vae import TrainConfig, VaeModel, init_vae, train_vae


@dataclass
class Opt:
    flag: str
    type: type | None
    default: object
    help: str
    required: bool = False
    choices: tuple | None = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


_COMMON = [Opt("--config", str, None, "flat key = value config file; flags win")]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "synth": ("generate a synthetic shift stream CSV", _COMMON + [
        Opt("--out", str, None, "output CSV path", required=True),
        Opt("--seed", int, 0, "stream seed"),
        Opt("--len", int, 6000, "series length"),
        Opt("--channels", int, 4, "channel count"),
        Opt("--changepoint", int, -1, "regime change row (-1: len/2)"),
        Opt("--rate", float, 0.01, "anomaly label rate"),
        Opt("--magnitude", float, 6.0, "anomaly size in noise sigmas"),
        Opt("--pre-amp", float, 1.0, "pre-shift amplitude"),
        Opt("--pre-freq", float, 0.02, "pre-shift frequency (cycles/step)"),
        Opt("--pre-level", float, 0.0, "pre-shift level"),
        Opt("--pre-noise", float, 0.1, "pre-shift noise sigma"),
        Opt("--post-amp", float, 1.6, "post-shift amplitude"),
        Opt("--post-freq", float, 0.028, "post-shift frequency"),
        Opt("--post-level", float, 2.5, "post-shift level"),
        Opt("--post-noise", float, 0.15, "post-shift noise sigma"),
    ]),
    "train": ("train a base detector on a CSV", _COMMON + [
        Opt("--data", str, None, "training CSV", required=True),
        Opt("--out", str, None, "output state file", required=True),
        Opt("--epochs", int, 30, "training epochs"),
        Opt("--w", int, 50, "window length"),
        Opt("--stride", int, 1, "window stride"),
        Opt("--hidden", int, 32, "hidden layer width"),
        Opt("--latent", int, 8, "latent dimension"),
        Opt("--seed", int, 0, "training seed"),
        Opt("--lr", float, 1e-3, "learning rate"),
        Opt("--batch-size", int, 100, "mini-batch size"),
        Opt("--elbo-mc", int, 1, "reparameterization samples per window"),
        Opt("--n", int, 3, "replayed samples per window (stored for retraining)"),
        Opt("--N", int, 10, "Monte-Carlo draws for latent targets (stored)"),
        Opt("--mx-input", str, "adjusted", "reconstruction-adjuster input mode",
            choices=("adjusted", "raw")),
        Opt("--normalize", bool, True, "z-score with training stats stored in the state"),
        Opt("--loss-out", str, None, "optional per-epoch loss CSV"),
    ]),
    "retrain": ("fit adjusters on a slice of new-distribution data", _COMMON + [
        Opt("--state", str, None, "input state file", required=True),
        Opt("--data", str, None, "new-distribution CSV", required=True),
        Opt("--out", str, None, "output state file", required=True),
        Opt("--start", int, 0, "first row of the slice"),
        Opt("--rows", int, -1, "rows in the slice (-1: to the end)"),
        Opt("--windows", int, -1, "cap on windows used (-1: all)"),
        Opt("--stride", int, 1, "window stride"),
        Opt("--n", int, 3, "replayed samples per window"),
        Opt("--N", int, 10, "Monte-Carlo draws for latent targets"),
        Opt("--seed", int, 0, "retraining seed"),
        Opt("--solver", str, "closed_form", "adjuster solver",
            choices=("closed_form", "gd")),
        Opt("--lr", float, None, "gd step size (default: auto-stable)"),
        Opt("--max-iters", int, 5000, "gd iteration cap"),
        Opt("--tol", float, 1e-12, "gd relative loss-change stop"),
        Opt("--report", str, None, "optional loss-trajectory CSV"),
    ]),
    "score": ("score a CSV with a saved state", _COMMON + [
        Opt("--state", str, None, "state file", required=True),
        Opt("--data", str, None, "CSV to score", required=True),
        Opt("--out", str, None, "output scores CSV", required=True),
        Opt("--stride", int, 1, "window stride"),
    ]),
    "eval": ("precision/recall/F1 from scores and labels", _COMMON + [
        Opt("--scores", str, None, "scores CSV (timestamp,score)", required=True),
        Opt("--labels", str, None, "labeled series CSV", required=True),
        Opt("--mode", str, "best", "threshold choice", choices=("best", "pot")),
        Opt("--q", float, 1e-3, "POT target risk"),
        Opt("--init-quantile", float, 0.98, "POT initial quantile"),
        Opt("--point-adjust", bool, True, "segment-level detection credit"),
        Opt("--out", str, None, "optional report file"),
    ]),
    "distance": ("dataset or deployment distances", _COMMON + [
        Opt("--kind", str, None, "kde (two CSVs) or transfer (two F1s)",
            required=True, choices=("kde", "transfer")),
        Opt("--a", str, None, "first CSV (kde)"),
        Opt("--b", str, None, "second CSV (kde)"),
        Opt("--bandwidth", float, None, "KDE bandwidth factor (default Scott)"),
        Opt("--n-mc", int, 4096, "Monte-Carlo sample count"),
        Opt("--seed", int, 0, "sampling seed"),
        Opt("--f1-star", float, None, "reference F1 (transfer)"),
        Opt("--f1", float, None, "deployed F1 (transfer)"),
        Opt("--star-report", str, None, "eval report file with reference F1"),
        Opt("--report", str, None, "eval report file with deployed F1"),
    ]),
    "bench": ("end-to-end stale vs adjusted vs fine-tuned comparison", _COMMON + [
        Opt("--seed", int, 7, "fixture seed"),
        Opt("--len", int, 6000, "stream length"),
        Opt("--channels", int, 4, "channel count"),
        Opt("--w", int, 50, "window length"),
        Opt("--hidden", int, 32, "hidden width"),
        Opt("--latent", int, 8, "latent dimension"),
        Opt("--epochs", int, 20, "base training epochs"),
        Opt("--finetune-epochs", int, 100, "full fine-tuning epochs"),
        Opt("--lr", float, 1e-3, "training learning rate"),
        Opt("--n", int, 3, "replayed samples per window"),
        Opt("--N", int, 10, "Monte-Carlo draws for latent targets"),
        Opt("--windows", int, 50, "retraining windows (the few-shot budget)"),
        Opt("--conv-iters", int, 1000, "gd iterations for the convergence CSV"),
        Opt("--out-dir", str, None, "write table.csv and convergence.csv here"),
    ]),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"driftfit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        for opt in opts:
            if opt.type is bool:
                p.add_argument(opt.flag, dest=opt.dest, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=opt.help)
            else:
                p.add_argument(opt.flag, dest=opt.dest, type=opt.type,
                               default=argparse.SUPPRESS, choices=opt.choices, help=opt.help)
    return parser


def _parse_config_file(path: str, opts: list[Opt]) -> dict:
    by_dest = {o.dest: o for o in opts}
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cli: cannot read config {path}: {exc}") from exc
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _Usage(f"config {path}: line {i}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in by_dest or dest == "config":
            raise _Usage(f"config {path}: line {i}: unknown key {key!r}")
        opt = by_dest[dest]
        try:
            if opt.type is bool:
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                out[dest] = value.lower() == "true"
            else:
                out[dest] = opt.type(value)
        except ValueError as exc:
            raise _Usage(f"config {path}: line {i}: bad value for {key}: {value!r}") from exc
    return out


class _Usage(Exception):
    pass


def _resolve(command: str, ns: argparse.Namespace) -> argparse.Namespace:
    opts = COMMANDS[command][1]
    given = vars(ns)
    merged = {o.dest: o.default for o in opts}
    config_path = given.get("config")
    if config_path:
        merged.update(_parse_config_file(config_path, opts))
    merged.update({k: v for k, v in given.items() if k != "command"})
    for o in opts:
        if o.required and merged.get(o.dest) is None:
            raise _Usage(f"{command}: missing required option {o.flag}")
    shown = " ".join(f"{k}={merged[k]}" for k in sorted(merged) if k != "config")
    print(f"# driftfit {command}: {shown}", file=sys.stderr)
    return argparse.Namespace(**merged)


# ---------------------------------------------------------------------------
# helpers

def _load_detector(path: str) -> DetectorState:
    state = load_state(path)
    if isinstance(state, VaeModel):
        return new_detector(state)
    return state


def _write_scores(path: str, timestamps: np.ndarray, scores: np.ndarray):
    lines = ["timestamp,score"]
    lines += [f"{int(t)},{repr(float(s))}" for t, s in zip(timestamps, scores)]
    Path(path).write_text("\n".join(lines) + "\n")


def _load_scores(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cli: cannot read scores {path}: {exc}") from exc
    if not lines or lines[0] != "timestamp,score":
        raise DataFormatError(f"cli: {path}: row 1: expected header 'timestamp,score'")
    ts, scores = [], []
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        try:
            ts.append(int(cells[0]))
            scores.append(float(cells[1]))
        except (IndexError, ValueError) as exc:
            raise DataFormatError(f"cli: {path}: row {i}: malformed score row {line!r}") from exc
    return np.array(ts, dtype=np.int64), np.array(scores)


def _f1_from_report(path: str) -> float:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cli: cannot read report {path}: {exc}") from exc
    for token in text.split():
        if token.startswith("f1="):
            return float(token[3:])
    raise DataFormatError(f"cli: {path}: no f1= field found")


def _write_csv(path: Path, header: str, rows):
    lines = [header] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands

def _cmd_synth(o) -> int:
    changepoint = o.changepoint if o.changepoint > 0 else o.len // 2
    spec = ShiftSpec(
        length=o.len, channels=o.channels, changepoint=changepoint,
        pre=Regime(o.pre_amp, o.pre_freq, o.pre_level, o.pre_noise),
        post=Regime(o.post_amp, o.post_freq, o.post_level, o.post_noise),
        anomaly_rate=o.rate, anomaly_magnitude=o.magnitude, seed=o.seed,
    )
    frame = synth_shift_stream(spec)
    save_csv(frame, o.out)
    print(f"wrote {o.out}: {frame.length} rows, {frame.channels} channels, "
          f"{int(frame.labels.sum())} anomalous points")
    return 0


def _cmd_train(o) -> int:
    frame = load_csv(o.data)
    stats: NormStats | None = None
    if o.normalize:
        frame, stats = zscore_normalize(frame)
    windows, _ = make_windows(frame, WindowSpec(o.w, o.stride))
    cfg = TrainConfig(epochs=o.epochs, batch_size=o.batch_size, learning_rate=o.lr,
                      seed=o.seed, hidden=o.hidden, latent=o.latent, n_mc=o.elbo_mc)
    model, losses = train_vae(init_vae(o.w, frame.channels, cfg), windows, cfg)
    state = new_detector(model, ReplayConfig(n_replay=o.n, n_mc=o.N, seed=o.seed),
                         mx_input=o.mx_input, norm=stats)
    serialize_state(state, o.out)
    if o.loss_out:
        _write_csv(Path(o.loss_out), "epoch,loss",
                   [(e, repr(l)) for e, l in enumerate(losses)])
    last = f"{losses[-1]:.6f}" if losses else "n/a"
    print(f"wrote {o.out}: trained on {windows.shape[0]} windows, final epoch loss {last}")
    return 0


def _cmd_retrain(o) -> int:
    state = _load_detector(o.state)
    frame = load_csv(o.data)
    stop = frame.length if o.rows < 0 else min(o.start + o.rows, frame.length)
    values = frame.values[o.start:stop]
    if state.norm is not None:
        values = state.norm.transform(values)
    windows, _ = make_windows(values, WindowSpec(state.vae.window, o.stride))
    if o.windows > 0:
        windows = windows[:o.windows]
    cfg = ReplayConfig(n_replay=o.n, n_mc=o.N, seed=o.seed)
    new_state, report = retrain(state, windows, cfg, make_rng(o.seed), solver=o.solver,
                                lr=o.lr, max_iters=o.max_iters, tol=o.tol)
    serialize_state(new_state, o.out)
    if o.report:
        _write_csv(Path(o.report), "iter,loss",
                   [(k, repr(float(v))) for k, v in enumerate(report.loss_trajectory)])
    print(f"wrote {o.out}: generation {new_state.generation}, solver={report.solver}, "
          f"{windows.shape[0]} windows, iterations={report.iterations}, "
          f"seconds={report.seconds:.3f}, loss_z={report.final_loss_z:.6g}, "
          f"loss_x={report.final_loss_x:.6g}")
    return 0


def _cmd_score(o) -> int:
    state = _load_detector(o.state)
    frame = load_csv(o.data)
    scores = score_frame(state, frame, WindowSpec(state.vae.window, o.stride))
    _write_scores(o.out, frame.timestamps, scores)
    print(f"wrote {o.out}: {scores.size} scores "
          f"(min {scores.min():.6g}, max {scores.max():.6g})")
    return 0


def _cmd_eval(o) -> int:
    _, scores = _load_scores(o.scores)
    labeled = load_csv(o.labels)
    if labeled.labels is None:
        raise DataFormatError(f"cli: {o.labels}: no label column")
    if labeled.length != scores.size:
        raise DataFormatError(
            f"cli: scores ({scores.size}) and labels ({labeled.length}) lengths differ")
    if o.mode == "pot":
        pot = pot_fit_threshold(scores, q=o.q, init_quantile=o.init_quantile)
        report = evaluate_at_threshold(scores, labeled.labels, pot.z_q, o.point_adjust)
    else:
        report = best_f1(scores, labeled.labels, o.point_adjust)
    print(report.line())
    if o.out:
        Path(o.out).write_text(report.line() + "\n")
    return 0


def _cmd_distance(o) -> int:
    if o.kind == "kde":
        if not o.a or not o.b:
            raise _Usage("distance --kind kde needs --a and --b")
        value = kde_kl(load_csv(o.a), load_csv(o.b), bandwidth=o.bandwidth,
                       n_mc=o.n_mc, rng=make_rng(o.seed))
        print(f"kde_kl={value:.6f}")
    else:
        f1_star = o.f1_star if o.f1_star is not None else \
            (_f1_from_report(o.star_report) if o.star_report else None)
        f1 = o.f1 if o.f1 is not None else \
            (_f1_from_report(o.report) if o.report else None)
        if f1_star is None or f1 is None:
            raise _Usage("distance --kind transfer needs --f1-star/--f1 or report files")
        print(f"transfer_distance={transfer_distance(f1_star, f1):.6f}")
    return 0


def _cmd_bench(o) -> int:
    """Stale vs affine-adjusted vs fully fine-tuned, on one seeded shift.

    Also emits the gradient-descent convergence series (loss, loss*k,
    loss*k^2 per iteration) used to eyeball the solver's decay rate.
    """
    spec = ShiftSpec(length=o.len, channels=o.channels, changepoint=o.len // 2, seed=o.seed)
    frame = synth_shift_stream(spec)
    tc = spec.changepoint
    pool_end = tc + (o.len - tc) // 3
    train_part = frame.slice(0, tc)
    pool_part = frame.slice(tc, pool_end)
    test_part = frame.slice(pool_end, o.len)

    norm_train, stats = zscore_normalize(train_part)
    cfg = TrainConfig(epochs=o.epochs, learning_rate=o.lr, seed=o.seed,
                      hidden=o.hidden, latent=o.latent)
    base_windows, _ = make_windows(norm_train, WindowSpec(o.w))
    base, _ = train_vae(init_vae(o.w, o.channels, cfg), base_windows, cfg)
    replay_cfg = ReplayConfig(n_replay=o.n, n_mc=o.N, seed=o.seed)
    stale = new_detector(base, replay_cfg, norm=stats)

    pool_windows, _ = make_windows(stats.transform(pool_part.values), WindowSpec(o.w))
    few_shot = pool_windows[:o.windows]

    adapted, report = retrain(stale, few_shot, replay_cfg, make_rng(o.seed))

    ft_cfg = TrainConfig(epochs=o.finetune_epochs, learning_rate=o.lr, seed=o.seed,
                         hidden=o.hidden, latent=o.latent)
    t0 = time.perf_counter()
    finetuned_vae, _ = train_vae(base, few_shot, ft_cfg)
    ft_seconds = time.perf_counter() - t0
    finetuned = new_detector(finetuned_vae, replay_cfg, norm=stats)

    rows = []
    for name, state, seconds in (("stale", stale, None),
                                 ("affine_adjust", adapted, report.seconds),
                                 ("full_finetune", finetuned, ft_seconds)):
        scores = score_frame(state, test_part, WindowSpec(o.w))
        rep = best_f1(scores, test_part.labels, point_adjust=False)
        rows.append((name, rep, seconds))

    print(f"{'method':<15} {'precision':>9} {'recall':>9} {'f1':>9} {'retrain_s':>10}")
    for name, rep, seconds in rows:
        sec = f"{seconds:.3f}" if seconds is not None else "-"
        print(f"{name:<15} {rep.precision:>9.3f} {rep.recall:>9.3f} {rep.f1:>9.3f} {sec:>10}")

    z_pairs, x_pairs = build_retrain_set(stale, few_shot, replay_cfg, make_rng(o.seed))
    _, _, conv = fit_adjusters_gd(z_pairs, x_pairs, max_iters=o.conv_iters, tol=0.0)
    if o.out_dir:
        out_dir = Path(o.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "table.csv", "method,precision,recall,f1,retrain_seconds",
                   [(name, repr(rep.precision), repr(rep.recall), repr(rep.f1),
                     "" if seconds is None else repr(seconds))
                    for name, rep, seconds in rows])
        traj = conv.loss_trajectory
        _write_csv(out_dir / "convergence.csv", "iter,loss,loss_k,loss_k2",
                   [(k, repr(float(traj[k])), repr(float(traj[k] * k)),
                     repr(float(traj[k] * k * k)))
                    for k in range(1, traj.size)])
        print(f"wrote {out_dir / 'table.csv'} and {out_dir / 'convergence.csv'}")
    return 0


def _dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    o = _resolve(ns.command, ns)
    handler = {
        "synth": _cmd_synth, "train": _cmd_train, "retrain": _cmd_retrain,
        "score": _cmd_score, "eval": _cmd_eval, "distance": _cmd_distance,
        "bench": _cmd_bench,
    }[ns.command]
    return handler(o)


def main(argv: list[str] | None = None) -> int:
    try:
        return _dispatch(list(sys.argv[1:]) if argv is None else list(argv))
    except SystemExit as exc:  # argparse --help (0) or usage error (2)
        return int(exc.code) if exc.code else 0
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DriftfitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
