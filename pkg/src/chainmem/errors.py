"""Exception types shared across the package."""


class ChainmemError(Exception):
    """Base class for all package errors."""


class DomainError(ChainmemError, ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(ChainmemError):
    """An input violates a numerical contract (e.g. a non-Hermitian matrix)."""


class ResourceError(ChainmemError):
    """The requested computation exceeds the desk-scale resource guard."""


class NumericalError(ChainmemError):
    """A numerical routine failed to converge.

    ``fallback`` carries a best-effort result when one exists.
    """

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback


class AnalysisError(ChainmemError):
    """An analysis cannot produce a meaningful answer for its input."""


class ConfigError(ChainmemError):
    """An experiment configuration is malformed."""
