"""Exception types shared across the package."""


class SBLInputError(ValueError):
    """Malformed or dimension-inconsistent input."""


class SBLNumericalError(ArithmeticError):
    """A factorization failed even after the jitter retry."""


class WindowTooShortError(SBLInputError):
    """Not enough pre-floor error samples to estimate a convergence rate."""
