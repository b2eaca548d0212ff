"""Exception hierarchy. Every raised error carries a module-qualified message."""


class DriftfitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DriftfitError):
    """Operands have incompatible lengths or matrix shapes."""


class NumericError(DriftfitError):
    """A computation produced a non-finite intermediate value."""


class DegenerateWeightsError(DriftfitError):
    """All Monte-Carlo importance weights underflowed; the estimate is undefined."""


class FitError(DriftfitError):
    """An optimization failed (divergence, empty data, unusable step size)."""


class ThresholdError(DriftfitError):
    """Tail-threshold fitting failed (too few excesses, invalid moments)."""


class EvalError(DriftfitError):
    """An evaluation is undefined for the given inputs."""


class DataFormatError(DriftfitError):
    """A CSV or state file violates its documented format."""
