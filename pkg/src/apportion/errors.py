class ApportionError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ApportionError, ValueError):
    """Malformed or inconsistent input (CLI exit code 2)."""


class NumericalError(ApportionError, ArithmeticError):
    """Rank deficiency or singularity encountered while solving (CLI exit code 3)."""
