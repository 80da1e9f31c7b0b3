"""Exception types raised across the package."""


class XAttnError(Exception):
    """Base class for all xattn failures."""


class ShapeError(XAttnError, ValueError):
    """Tensor extents do not match what an operation requires."""


class EmptyDistributionError(XAttnError, ValueError):
    """A softmax row has no permitted entry."""


class TensorFormatError(XAttnError, ValueError):
    """An XATN file is malformed or holds non-finite data."""


class InvalidDistributionError(XAttnError, ValueError):
    """A vector is not a probability distribution."""


class UndefinedCorrelationError(XAttnError, ValueError):
    """Rank correlation is undefined because a rank vector is constant."""


class ConfigError(XAttnError, ValueError):
    """Configuration values are inconsistent or out of range."""


class MaskError(XAttnError, ValueError):
    """A block mask violates its invariants."""


class CalibrationError(XAttnError, RuntimeError):
    """Threshold calibration could not complete."""
