"""Exception hierarchy shared by all modules."""


class BmrswError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(BmrswError, ValueError):
    """Inputs have incompatible shapes, lengths or atom lists."""


class DimensionError(StructuralError):
    """An operation restricted to a given ambient dimension got another one."""


class AbsoluteContinuityError(BmrswError, ValueError):
    """A measure puts mass where its reference measure has none."""


class SizeError(BmrswError, ValueError):
    """Problem too large (or too small) for the requested exact routine."""


class PreconditionError(BmrswError, ValueError):
    """A documented precondition, e.g. parameter bounds, was violated."""


class ConvergenceError(BmrswError, RuntimeError):
    """An iterative routine hit its iteration cap.

    The best iterate found so far is attached so callers can still inspect it.
    """

    def __init__(self, message, best=None, value=None):
        super().__init__(message)
        self.best = best
        self.value = value


class OptimizerError(BmrswError, RuntimeError):
    """CMA-ES could not make progress (e.g. a whole generation was non-finite)."""


class ReplicateError(BmrswError, RuntimeError):
    """A bootstrap replicate failed; carries the replicate index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(BmrswError, ValueError):
    """Configuration could not be parsed or validated."""
