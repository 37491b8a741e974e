"""Exception types shared across the toolkit."""


class EmtStudioError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(EmtStudioError, ValueError):
    """Input point dimension does not match the model or domain."""


class FactorizationError(EmtStudioError, ArithmeticError):
    """Gram matrix could not be factorized even after jitter escalation."""


class OutsideSupport(EmtStudioError, ValueError):
    """A hyperparameter value lies outside its prior support."""


class GridExhausted(EmtStudioError, RuntimeError):
    """No unvisited grid points remain for acquisition maximization."""


class SimulationError(EmtStudioError, RuntimeError):
    """Time-domain solver failed (non-convergent nonlinear step)."""


class GridFileError(EmtStudioError, ValueError):
    """Lookup-table file is malformed, incomplete, or inconsistent."""


class ConfigError(EmtStudioError, ValueError):
    """Study configuration failed validation."""
