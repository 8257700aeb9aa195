"""Exception hierarchy; the CLI maps each family to an exit status."""


class DehomError(Exception):
    """Base class for all package errors."""


class ConfigError(DehomError, ValueError):
    """Malformed or inconsistent configuration."""


class NumericalError(DehomError, ArithmeticError):
    """A numerical procedure failed (singular system, non-finite values, no convergence)."""


class SingularSystemError(NumericalError):
    """The stiffness system cannot be solved under the given supports."""
