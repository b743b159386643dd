"""Exception hierarchy shared by every edlab module."""


class EdlabError(Exception):
    """Base class for all library errors."""


class NetworkError(EdlabError):
    pass


class DisconnectedNetwork(NetworkError):
    pass


class SingularSusceptance(NetworkError):
    pass


class SlackError(NetworkError):
    """Raised when a network has no slack bus or more than one."""


class DimensionMismatch(EdlabError, ValueError):
    pass


class InfeasibleError(EdlabError):
    """The LP (or the dispatch range it encodes) has no feasible point."""


class NumericalFailure(EdlabError):
    pass


class RecursionDepthExceeded(EdlabError):
    pass


class OutOfDomain(EdlabError, ValueError):
    pass


class InvalidProbability(EdlabError, ValueError):
    pass


class InvalidParams(EdlabError, ValueError):
    pass


class EmpiricalNotDifferentiable(EdlabError):
    pass


class EmptyDataset(EdlabError, ValueError):
    pass


class DataError(EdlabError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotoneTimestamps(DataError):
    pass


class NegativeLoad(DataError):
    pass


class GapError(DataError):
    pass


class InsufficientData(DataError):
    pass


class ConfigError(EdlabError, ValueError):
    pass
