"""Exception hierarchy shared by the library and the command line."""


class AugdaError(Exception):
    """Base class for all errors raised by augda."""

    exit_code = 1


class ConfigError(AugdaError, ValueError):
    exit_code = 2


class DataError(AugdaError, ValueError):
    exit_code = 3


class InsufficientDataError(DataError):
    """A statistical test was asked to run on too few samples."""


class GraphError(AugdaError, ValueError):
    exit_code = 3


class CycleError(GraphError):
    pass


class InconsistentPdagError(GraphError):
    """The partially directed graph admits no consistent DAG extension."""


class NumericalError(AugdaError, ArithmeticError):
    exit_code = 4


class NonFiniteGradientError(NumericalError):
    pass


class StaleCacheError(AugdaError, RuntimeError):
    """A forward cache was reused after the network parameters changed."""


class TrainingDiverged(NumericalError):
    """Raised when the training loss becomes non-finite.

    ``checkpoint`` holds the last state whose loss was finite.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
