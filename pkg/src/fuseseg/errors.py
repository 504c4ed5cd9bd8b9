"""Exception hierarchy shared across the package."""


class FusesegError(Exception):
    """Base class for all package errors."""


class ShapeError(FusesegError):
    """Tensor shapes are incompatible for the requested operation."""


class NonFiniteError(FusesegError):
    """An operation produced NaN or Inf from finite inputs."""


class ContractError(FusesegError):
    """An API precondition was violated (e.g. non-scalar loss)."""


class ConfigError(FusesegError):
    """Invalid or inconsistent configuration."""


class DataFormatError(FusesegError):
    """Malformed on-disk data (dataset index, RLE, image files)."""


class GenerationError(FusesegError):
    """Synthetic scene generation could not satisfy its constraints."""


class DivergenceError(FusesegError):
    """Training produced a non-finite loss."""
