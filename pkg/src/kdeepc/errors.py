"""Exception types shared across the package."""


class KdeepcError(Exception):
    """Base class for package-specific errors."""


class NumericOverflowError(KdeepcError):
    """A kernel evaluation produced a non-finite value (e.g. exp overflow)."""


class UnsupportedEmbeddingError(KdeepcError):
    """No closed-form noise embedding exists for this kernel/noise pair."""


class InsufficientDataError(KdeepcError, ValueError):
    """The trajectory is shorter than the requested window depth."""


class SolverFailureError(KdeepcError):
    """Every start of an iterative solve failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics if diagnostics is not None else []


class DivergenceError(KdeepcError):
    """Plant simulation produced a non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotInBehaviorError(KdeepcError):
    """Constrained query rows are inconsistent with the data span."""


class InfeasibleError(KdeepcError):
    """Constraints admit no solution."""


class GenerationError(KdeepcError):
    """Random fixture generation exhausted its retry budget."""
