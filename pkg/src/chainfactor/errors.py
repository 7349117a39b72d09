class ChainfactorError(Exception):
    pass


class ArgumentError(ChainfactorError, ValueError):
    """Invalid argument (bad site index, shape mismatch, bad parameter)."""


class ContractViolation(ChainfactorError, ValueError):
    """An input violates a mathematical precondition (not Hermitian, not PSD, ...)."""


class ResourceError(ChainfactorError, MemoryError):
    """Requested object exceeds the dense-matrix budget."""
