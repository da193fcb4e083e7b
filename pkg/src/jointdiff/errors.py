"""Exception types shared across the package."""


class JointDiffError(Exception):
    """Base class for all package errors."""


class DimensionError(JointDiffError, ValueError):
    """Tensor rank or extent does not match what an operation needs."""


class ParameterError(JointDiffError, ValueError):
    """A scalar or config parameter is outside its valid range."""


class ValidationError(JointDiffError, ValueError):
    """Input data violates a structural contract (e.g. not one-hot)."""


class DegenerateSignalError(ParameterError):
    """Signal power too small to derive a meaningful balancing factor."""


class FormatError(JointDiffError, ValueError):
    """Malformed tensor container or manifest.

    Carries the byte offset at which parsing failed when known.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingDivergence(JointDiffError, RuntimeError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
