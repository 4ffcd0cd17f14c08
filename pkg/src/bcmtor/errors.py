"""Exception hierarchy shared by all modules."""


class BcmtorError(Exception):
    """Base class for every error raised by the package."""


class NumericalError(BcmtorError):
    """A computation produced unusable numbers (CLI exit code 1)."""


class InstabilityError(NumericalError):
    """The time stepper produced non-finite values."""

    def __init__(self, step):
        super().__init__(f"wave solver became non-finite at time step {step}")
        self.step = step


class GridMismatchError(BcmtorError, ValueError):
    """Signal, horizon and grid are not commensurate."""


class NotPositiveError(NumericalError):
    """An operator expected to be positive has no positive spectrum."""


class DataInconsistencyError(NumericalError):
    """Inverse data violate a structural identity (e.g. symmetry of C^T)."""


class InsufficientIlluminationError(NumericalError):
    """Recovered waves vanish on the whole reconstruction interval."""


class ConfigError(BcmtorError):
    """Invalid run configuration (CLI exit code 2)."""
