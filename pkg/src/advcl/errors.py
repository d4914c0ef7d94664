"""Exception hierarchy shared by every module of the package."""


class AclError(Exception):
    """Base class for all errors raised by advcl."""


class DimensionError(AclError, ValueError):
    """Operand shapes are incompatible."""


class LabelError(AclError, ValueError):
    """A class or task label falls outside its valid range."""


class NumericError(AclError, ArithmeticError):
    """Non-finite values reached a numerically sensitive operation."""


class ContractError(AclError, RuntimeError):
    """A documented precondition of an operation was violated."""


class CapacityError(AclError, RuntimeError):
    """The model cannot grow past its configured task capacity."""


class BudgetError(AclError, ValueError):
    """Replay budget is not divisible by the number of classes per task."""


class DataError(AclError, ValueError):
    """A dataset is empty, missing, or has too few samples."""


class ConfigError(AclError, ValueError):
    """Invalid experiment configuration.

    ``key`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class FormatError(AclError, ValueError):
    """A binary file does not follow the expected layout."""


class LengthError(FormatError):
    """A binary file ended before its header said it would."""


class UndefinedMetricError(AclError, ValueError):
    """The metric is not defined for the given result matrix."""


class ReportError(AclError, ValueError):
    """Runs cannot be merged into one comparison table."""


class TrainingError(AclError, RuntimeError):
    """A module contract failed while training task ``task``."""

    def __init__(self, task, cause):
        super().__init__(f"task {task}: {type(cause).__name__}: {cause}")
        self.task = task
        self.cause = cause
