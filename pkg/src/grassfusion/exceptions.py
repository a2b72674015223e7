"""Exception hierarchy shared across the package."""


class GrassFusionError(Exception):
    """Base class for all errors raised by grassfusion."""


class ShapeError(GrassFusionError, ValueError):
    """Array dimensions do not agree."""


class DegenerateInputError(GrassFusionError, ValueError):
    """Input is rank deficient or otherwise numerically degenerate."""


class ContractViolation(GrassFusionError, ValueError):
    """A documented precondition on an argument was not met."""


class ParameterError(GrassFusionError, ValueError):
    """A scalar parameter is outside its admissible range."""


class UnderdeterminedError(GrassFusionError, ValueError):
    """Too few observations to determine the requested quantity."""


class LineSearchStalled(GrassFusionError):
    """Armijo backtracking exhausted its budget without sufficient decrease."""


class ConfigError(GrassFusionError, ValueError):
    """Malformed or invalid experiment configuration."""


class DataError(GrassFusionError, ValueError):
    """Malformed input data file."""


class StageError(GrassFusionError):
    """Wraps an exception raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
