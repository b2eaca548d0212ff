"""driftfit: light affine retraining of VAE time-series anomaly detectors
under distribution shift.

The public surface re-exports the main types and operations; submodules hold
the detail: numerics (substrate), vae (host model), replay (latent-target
estimation), adjusters (affine maps), retrain (orchestration and scoring),
evaluate (thresholds and metrics), dataio (files, windows, synthetic
streams), cli (command line).
"""

from driftfit.adjusters import AffineAdjuster, PairSet, adjust_mse, apply_affine, fit_affine_closed_form
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
from driftfit.errors import (
    DataFormatError,
    DegenerateWeightsError,
    DriftfitError,
    EvalError,
    FitError,
    NumericError,
    ShapeError,
    ThresholdError,
)
from driftfit.evaluate import (
    EvalReport,
    PotThreshold,
    best_f1,
    evaluate_at_threshold,
    kde_kl,
    pot_fit_threshold,
    transfer_distance,
)
from driftfit.kernels import backend as kernel_backend
from driftfit.numerics import (
    AdamState,
    GaussianDiag,
    Rng,
    adam_step,
    child_rng,
    finite_diff_grad_check,
    gaussian_diag_logpdf,
    make_rng,
    sample_gaussian_diag,
)
from driftfit.replay import LatentEstimate, ReplayConfig, estimate_latent_target, replay_samples
from driftfit.retrain import (
    DetectorState,
    RetrainReport,
    build_retrain_set,
    fit_adjusters_gd,
    new_detector,
    retrain,
    score_frame,
    score_window,
    score_windows,
)
from driftfit.vae import TrainConfig, VaeModel, decode, elbo_loss, encode, init_vae, reconstruct, train_vae

__version__ = "0.1.0"
