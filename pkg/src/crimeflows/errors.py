"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: parse/validation/configuration
problems exit 1, runtime and convergence failures exit 2.
"""


class CrimeflowsError(Exception):
    """Base class for all package errors."""


class ParseError(CrimeflowsError):
    """An input file could not be parsed; message names the offending record."""


class ValidationError(CrimeflowsError):
    """Parsed input violates a structural invariant."""


class ConfigError(CrimeflowsError):
    """Configuration is inconsistent or leaves nothing to compute."""


class ConvergenceError(CrimeflowsError):
    """An iterative fit failed in a way that cannot be reported as a result."""
