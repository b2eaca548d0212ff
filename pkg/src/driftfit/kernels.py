"""Import-time selection of the kernel backend.

The compiled core (driftfit._ckernels) is preferred when it was built;
otherwise the pure-numpy fallback is used. DRIFTFIT_KERNELS=py forces the
fallback, DRIFTFIT_KERNELS=c demands the compiled core and fails loudly if
it is missing. benchmarks/bench_kernels.py compares the two.
"""

import os

_requested = os.environ.get("DRIFTFIT_KERNELS", "auto").lower()
if _requested not in ("auto", "c", "py"):
    raise ImportError(f"driftfit.kernels: unknown DRIFTFIT_KERNELS value {_requested!r}")

if _requested == "py":
    from driftfit import _pykernels as _impl

    BACKEND = "py"
else:
    try:
        from driftfit import _ckernels as _impl

        BACKEND = "c"
    except ImportError:
        if _requested == "c":
            raise
        from driftfit import _pykernels as _impl

        BACKEND = "py"

gauss_mlp_forward = _impl.gauss_mlp_forward
gauss_mlp_backward = _impl.gauss_mlp_backward
gaussian_logpdf_pairs = _impl.gaussian_logpdf_pairs
gaussian_logpdf_rows_vs_one = _impl.gaussian_logpdf_rows_vs_one
gaussian_logpdf_one_vs_rows = _impl.gaussian_logpdf_one_vs_rows
adam_step_inplace = _impl.adam_step_inplace


def backend() -> str:
    """Name of the active backend: "c" (compiled) or "py" (numpy)."""
    return BACKEND
