"""Exception types shared across the pipeline."""


class ChironError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(ChironError, ValueError):
    """An argument or record violates a documented precondition."""


class OverUtilized(InvalidInput):
    """Average ingress is at or above capacity, so catch-up never converges.

    ``index`` is set when the offending value came from a dataset row.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SchemaError(InvalidInput):
    """A dataset or config document does not match its schema."""

    def __init__(self, message: str, row: int | None = None, field: str | None = None):
        super().__init__(message)
        self.row = row
        self.field = field


class FitError(InvalidInput):
    """A regression could not be fitted; ``model`` names which one."""

    def __init__(self, message: str, model: str | None = None):
        super().__init__(message if model is None else f"{model}: {message}")
        self.model = model


class ZeroVariance(FitError):
    """The targets have no spread but the fit still leaves a residual."""


class Infeasible(ChironError):
    """The availability model never reaches the requested TRT bound."""


class OutOfDomain(ChironError):
    """Every root of the inverted model lies outside the profiled CI range."""

    def __init__(self, message: str, nearest_root: float, domain: tuple[float, float]):
        super().__init__(message)
        self.nearest_root = nearest_root
        self.domain = domain


class InvalidFailureSpec(InvalidInput):
    """Failure injections overlap a recovery or fall outside the run."""


class NotCaughtUp(ChironError):
    """The backlog after a failure was still non-zero when the run ended."""
