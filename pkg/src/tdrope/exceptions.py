"""Exception hierarchy shared by all modules."""


class TdropeError(Exception):
    """Base class for errors raised by this package."""


class InvalidStateError(TdropeError, ValueError):
    """A state id lies outside the state space of the MDP."""


class OverlapViolationError(TdropeError, ValueError):
    """The behavior side puts zero mass where the evaluation side does not."""


class ConvergenceError(TdropeError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The last residual is kept on ``residual`` so callers can report it.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DegenerateWeightsError(TdropeError, ZeroDivisionError):
    """Self-normalized estimator with an all-zero weight sum."""


class ConfigError(TdropeError, ValueError):
    """Malformed or inconsistent experiment configuration."""
