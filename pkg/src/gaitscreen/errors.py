"""Exception types shared across the package."""


class GaitScreenError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(GaitScreenError, ValueError):
    """Tensor shapes incompatible for the requested operation."""


class DegenerateBatchError(GaitScreenError, ValueError):
    """Batch too small for an operation that needs batch statistics."""


class SamplerError(GaitScreenError, ValueError):
    """Dataset cannot satisfy the batch sampler's requirements."""


class DataFormatError(GaitScreenError, ValueError):
    """On-disk dataset, guidance file or checkpoint is malformed."""


class ConfigError(GaitScreenError, ValueError):
    """Run configuration is invalid; message lists every offending key."""


class NumericError(GaitScreenError, RuntimeError):
    """Non-finite values encountered (divergence, invalid evaluation)."""
