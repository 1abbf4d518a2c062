"""Exception types shared across the package.

Each error carries a short machine-readable code used by the CLI to format
``error[CODE]: message`` lines and pick exit statuses.
"""


class FracUQError(Exception):
    """Base class for all package errors."""

    code = "E_INTERNAL"


class ConfigurationError(FracUQError):
    """Inconsistent or out-of-range configuration values."""

    code = "E_CONFIG"


class DomainError(FracUQError):
    """A spatial point or parameter vector lies outside its admissible set."""

    code = "E_DOMAIN"


class ValidationError(FracUQError):
    """A file or object failed structural validation (e.g. reducible modulus)."""

    code = "E_VALIDATE"


class SolverError(FracUQError):
    """A linear solve failed to converge; message carries the residual."""

    code = "E_SOLVER"


class ToleranceError(FracUQError):
    """A requested accuracy could not be achieved within hard caps."""

    code = "E_TOL"


class UsageError(FracUQError):
    """Bad command line or missing input file."""

    code = "E_USAGE"
