"""Exception hierarchy shared by all gads modules."""


class GadsError(Exception):
    """Base class for every error raised by this package."""


class FormatError(GadsError):
    """File does not start with the expected magic bytes / version."""


class CorruptFileError(GadsError):
    """File has valid magic but internally inconsistent structure."""


class ValidationError(GadsError):
    """A domain invariant is violated (non-finite value, bad label, ...)."""


class ShapeError(GadsError):
    """Array dimensions do not match what an operation requires."""


class NormalizationError(GadsError):
    """A vector that must be L2-normalized has zero norm."""


class InsufficientNormalsError(GadsError):
    """Fewer normal records available than the requested prompt count."""


class ConfigError(GadsError):
    """An argument or configuration value is outside its allowed range."""


class UndefinedMetricError(GadsError):
    """The requested metric is undefined for the given inputs."""


class DivergenceError(GadsError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")
