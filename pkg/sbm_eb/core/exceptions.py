"""Exception hierarchy for sbm-eb.

Every error raised by the package derives from SbmEbError. The three families
carry the process exit code the CLI reports for them.
"""


class SbmEbError(Exception):
    """Base class for all sbm-eb errors."""

    category = "unknown"
    exit_code = 1


class ConfigError(SbmEbError, ValueError):
    """Invalid configuration or model parameters."""

    category = "configuration"
    exit_code = 2


class DataError(SbmEbError, ValueError):
    """Malformed or unusable input data."""

    category = "data"
    exit_code = 3


class NumericalError(SbmEbError, ArithmeticError):
    """A numerical routine could not produce a valid result."""

    category = "numerical"
    exit_code = 4


class InvalidConcentrationError(ConfigError):
    """A Dirichlet concentration parameter is not strictly positive."""


class GraphParseError(DataError):
    """A graph or label file does not follow the text format."""

    def __init__(self, message: str, path: str = "", line_number: int = 0):
        self.path = path
        self.line_number = line_number
        location = f"{path}:{line_number}: " if path else f"line {line_number}: "
        super().__init__(location + message)


class SelfLoopError(GraphParseError):
    """An edge list contains an edge from a vertex to itself."""


class InsufficientLengthError(DataError):
    """Too few chains or samples for a convergence diagnostic."""


class AllTiesError(DataError):
    """Every pair in a paired comparison is tied."""


class DisconnectedSampleError(DataError):
    """A resampled graph is not connected."""


class NotPSDError(NumericalError):
    """A block probability matrix has a negative eigenvalue."""


class RankExceedsDError(NumericalError):
    """A block probability matrix has more positive eigenvalues than d."""


class InsufficientPositiveSpectrumError(NumericalError):
    """Fewer than d eigenvalues of the adjacency matrix are positive."""


class SingularDeltaError(NumericalError):
    """The second moment matrix is too ill-conditioned to invert."""


class DegenerateClusterError(NumericalError):
    """Every EM restart collapsed a mixture component."""


class DegenerateProbabilityError(NumericalError):
    """A log-likelihood term has probability zero for an observed outcome."""


class ProbabilityOutOfRangeError(NumericalError):
    """A latent dot product falls outside [0, 1]."""


class RejectionBudgetExhaustedError(NumericalError):
    """Rejection sampling from a truncated prior ran out of attempts."""
