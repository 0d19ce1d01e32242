"""Exception hierarchy for the solver and its harness."""


class BarrierBloError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteEvaluation(BarrierBloError):
    """A problem oracle returned NaN or Inf."""


class InfeasibleSubproblem(BarrierBloError):
    """The direction subproblem has an empty feasible set (negative squared radius)."""


class DegenerateGradient(BarrierBloError):
    """The barrier gradient vanishes on the boundary of the feasible region."""


class DegenerateDual(BarrierBloError):
    """The multiplier cannot be recovered because the constraint gradient vanishes."""


class MaxBacktracksExceeded(BarrierBloError):
    """Backtracking hit its cap without satisfying both step conditions."""

    def __init__(self, message, *, t, armijo_residual, safety_residual):
        super().__init__(message)
        self.t = t
        self.armijo_residual = armijo_residual
        self.safety_residual = safety_residual


class InitBudgetExhausted(BarrierBloError):
    """Feasibility initialization ran out of descent steps."""


class BracketFailure(BarrierBloError):
    """The dual bisection oracle could not bracket a root."""


class IndefiniteHessian(BarrierBloError):
    """Conjugate gradient met non-positive curvature."""


class IdxFormatError(BarrierBloError):
    """An IDX file has a bad magic number or is truncated."""


class ConfigError(BarrierBloError):
    """An experiment or problem configuration is invalid."""
