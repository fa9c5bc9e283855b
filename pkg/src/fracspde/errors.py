"""Exception hierarchy shared by all modules."""


class FracSPDEError(Exception):
    """Base class for errors raised by this package."""


class DomainError(FracSPDEError, ValueError):
    """An argument lies outside the domain of the operation."""


class AccuracyError(FracSPDEError, ArithmeticError):
    """A numerical method could not certify the requested accuracy."""


class UnsupportedConfigurationError(FracSPDEError, NotImplementedError):
    """The parameter combination is valid mathematically but not implemented."""


class DivergenceError(FracSPDEError, ArithmeticError):
    """An iteration diverged."""


class InsufficientReplicatesError(FracSPDEError, ValueError):
    """Too few Monte Carlo replicates for a statistical estimate."""


class ConfigError(FracSPDEError, ValueError):
    """An experiment configuration is malformed or violates a precondition."""
