"""Exception hierarchy shared by every module."""


class HSIError(Exception):
    """Base class for all library errors."""


class DomainError(HSIError, ValueError):
    """A value lies outside the domain an operation accepts."""


class ShapeError(HSIError, ValueError):
    """Array shapes or wavelength grids do not agree."""


class ConfigurationError(HSIError, ValueError):
    """An operator, generator or sampler parameter is invalid."""


class DataError(HSIError, ValueError):
    """Input data is malformed (unlabeled pixels, empty ensembles, ...)."""


class NumericalError(HSIError, ArithmeticError):
    """A matrix is too ill-conditioned for the requested construction."""


class GamutError(HSIError, ValueError):
    """A target chromaticity lies outside the basis ring polygon."""


class FeasibilityError(HSIError, ValueError):
    """Free barycentric coordinates violate a nonnegativity bound."""


class SamplingError(HSIError, RuntimeError):
    """Rejection sampling exhausted its budget."""


class UndefinedMetricError(HSIError, ValueError):
    """A metric has no defined value for the given inputs."""


class DivergenceError(HSIError, FloatingPointError):
    """The sampler state became non-finite or exploded."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"sampler state diverged at step {step}")


class EnsembleError(HSIError, RuntimeError):
    """A posterior ensemble member failed; completed members are kept."""

    def __init__(self, member, cause, completed):
        self.member = member
        self.cause = cause
        self.completed = completed
        super().__init__(f"ensemble member {member} failed: {cause}")


class FormatError(HSIError, ValueError):
    """A file does not follow its declared format."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
