"""Exception types shared across the package.

Errors that indicate bad user input subclass ValueError so generic callers
can catch them the usual way; numerical failures subclass RuntimeError.
"""


class MtsensError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MtsensError, ValueError):
    """Incompatible or inadmissible dimensions (e.g. m >= k)."""


class DegenerateModelError(MtsensError, ValueError):
    """A fitted or supplied model has no usable structure."""


class SingularFitError(MtsensError, ValueError):
    """Design matrix is rank deficient."""

    def __init__(self, message: str, columns=None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class SeparationError(MtsensError, ValueError):
    """Probit likelihood is unbounded (perfectly separated data)."""


class InvalidCopulaError(MtsensError, ValueError):
    """Copula parameters do not define a proper density."""


class CalibrationError(MtsensError, ValueError):
    """Sensitivity parameters outside their admissible range."""


class PositivityError(MtsensError, ValueError):
    """Sensitivity parameter sits at a positivity-violating boundary."""


class ConvergenceError(MtsensError, RuntimeError):
    """An iterative routine failed to converge.

    The last iterate is attached so callers can inspect it.
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InputFormatError(MtsensError, ValueError):
    """Malformed input file or argument (CLI-facing)."""
