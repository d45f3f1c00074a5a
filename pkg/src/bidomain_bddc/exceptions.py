class InvalidConfigError(ValueError):
    """Raised when a geometry, decomposition or solver configuration is unusable."""


class AssemblyError(RuntimeError):
    """Raised when finite element assembly meets an inverted or degenerate element."""


class SingularSystemError(RuntimeError):
    """Raised when a local or coarse factorization is singular beyond the known kernel."""


class ConvergenceError(RuntimeError):
    """Raised when GMRES or Newton fails to converge; carries the partial result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
