from pathlib import Path


class GlmixError(Exception):
    """Base class for every error raised by incremental_glmix"""


class ShapeError(GlmixError, ValueError):
    """Dimensions of vectors, matrices or datasets do not match"""


class DataValidationError(GlmixError, ValueError):
    """Input data violates a documented invariant"""


class DomainError(DataValidationError):
    """A function was evaluated outside of its domain"""


class UndefinedMetricError(DataValidationError):
    """A metric is undefined for the given input, e.g. AUC with a single class"""


class DatasetParseError(DataValidationError):
    """A phase file line could not be parsed

    Attributes
    ----------
    path : Path
        The file being parsed
    line_number : int
        1-based number of the offending line
    """

    def __init__(self, path: Path | str, line_number: int, message: str):
        self.path = Path(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class PreconditionError(GlmixError):
    """An operation was called without its precondition holding"""


class EmptyMemoryError(PreconditionError):
    """A DFP memory would be, or is, empty"""


class CapacityError(GlmixError):
    """A dense representation would exceed its configured budget"""


class VariantMismatchError(GlmixError, TypeError):
    """Two Hessian representations of different variants were combined"""


class NumericalError(GlmixError, ArithmeticError):
    """An objective, gradient or update became non-finite

    Attributes
    ----------
    iteration : int | None
        Optimizer iteration at which the failure was detected
    """

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class StoreVersionError(GlmixError):
    """A model store was written by an incompatible format version"""


class StoreIntegrityError(GlmixError):
    """A model store file is truncated or corrupt"""


class TrainingFailure(GlmixError):
    """A scheduler round could not be trained; the cause is chained"""
