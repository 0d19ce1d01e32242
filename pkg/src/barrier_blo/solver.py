"""Sequential QCQP iteration with the two-condition line search.

Each step solves the barrier QCQP for a direction, backtracks until both the
descent and safety conditions hold, and moves. Starting inside the
``eps^2``-sublevel set of ``h`` keeps every iterate there.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InitBudgetExhausted, MaxBacktracksExceeded
from .linesearch import LineSearchConfig, backtrack
from .problem import BilevelProblem, Iterate, ProblemEval, barrier_value, check_regularity, evaluate
from .qcqp import QcqpParams, residual_scale, solve_direction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Every scalar the iteration needs. Defaults follow the reference experiments."""

    eps: float = 0.1
    w: float = 0.01
    alpha_b: float = 0.1
    alpha_ls: float = 0.1
    gamma: float = 0.1
    beta: float = 0.5
    t_max: float = 1.0
    max_backtracks: int = 60
    max_iter: int = 1000
    tol_dz: float = 1e-8
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be > 0, got {self.eps!r}")
        if not self.tol_dz >= 0:
            raise ValueError(f"tol_dz must be >= 0, got {self.tol_dz!r}")
        if self.max_iter < 1 or self.record_every < 1:
            raise ValueError("max_iter and record_every must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        # validate the sub-configs eagerly
        self.qcqp
        self.ls

    @property
    def qcqp(self) -> QcqpParams:
        return QcqpParams(w=self.w, alpha_b=self.alpha_b, eps=self.eps)

    @property
    def ls(self) -> LineSearchConfig:
        return LineSearchConfig(alpha_ls=self.alpha_ls, gamma=self.gamma, beta=self.beta,
                                t_max=self.t_max, max_backtracks=self.max_backtracks)

    def to_dict(self) -> dict:
        return asdict(self)


class Status(enum.Enum):
    STATIONARY = "Stationary"
    MAX_ITER = "MaxIter"
    LINE_SEARCH_FAILURE = "LineSearchFailure"
    INFEASIBLE_START = "InfeasibleStart"


@dataclass(frozen=True)
class IterationRecord:
    k: int
    f: float
    h_minus_eps2: float
    norm_dz: float
    t: float
    lam: float
    backtracks: int
    kkt_residual: float
    hypergrad_norm: float
    wall_time_ms: float
    # grad f^T dz + ||dz||^2 and the scale it is judged against
    descent_gap: float = 0.0
    scale: float = 1.0


@dataclass
class SolveReport:
    status: Status
    final: Iterate
    final_f: float
    final_h: float
    trace: list[IterationRecord]
    ergodic_avg: list[float]
    config: SolverConfig
    seed: int
    iterations: int = 0
    message: str = ""
    regularity_flags: int = 0
    final_kkt: float = math.nan
    steps: list[float] = field(default_factory=list)
    sq_norms: list[float] = field(default_factory=list)

    @property
    def f_best(self) -> float:
        """Smallest observed objective, standing in for the unknown optimum."""
        fs = [r.f for r in self.trace] + [self.final_f]
        return min(fs)

    @property
    def t_obs_min(self) -> float:
        return min(self.steps) if self.steps else math.nan

    def ergodic_bound(self, K: int) -> float:
        """Observed right-hand side ``(f0 - f_best) / (alpha_ls * t_obs_min * K)``."""
        f0 = self.trace[0].f
        return (f0 - self.f_best) / (self.config.alpha_ls * self.t_obs_min * K)


@dataclass(frozen=True)
class KktResidual:
    value: float
    stationarity: float
    feasibility: float
    complementarity: float
    lower_residual: float
    mapped_tolerance: float


def kkt_residual(ev: ProblemEval, lam: float, eps: float) -> KktResidual:
    """Approximate-KKT residual of ``min f s.t. h <= eps^2`` at ``ev``.

    ``value`` is the smallest tolerance for which the stationarity,
    feasibility and (scalarized) complementarity clauses hold; a positive
    multiplier on a constraint slack by more than the tolerance counts as
    ``min(lam, eps^2 - h)``. With the
    multiplier mapped to the stationary reformulation the same point satisfies
    ``||grad f + J^T nu|| <= mapped_tolerance`` and
    ``||grad_y g|| <= mapped_tolerance``.
    """
    if lam < 0:
        raise ValueError("multiplier must be non-negative")
    gap = ev.h - eps * eps
    stat = float(np.linalg.norm(ev.grad_f + lam * ev.grad_h))
    feas = max(gap, 0.0)
    # complementarity holds at tolerance e when lam <= e or the constraint is e-active
    comp = min(lam, max(-gap, 0.0))
    value = max(stat, feas, comp)
    return KktResidual(
        value=value,
        stationarity=stat,
        feasibility=feas,
        complementarity=comp,
        lower_residual=math.sqrt(ev.h),
        mapped_tolerance=max(value, math.sqrt(eps * eps + value)),
    )


def solve(problem: BilevelProblem, z0, cfg: SolverConfig,
          metrics: Callable[[ProblemEval], float] | None = None) -> SolveReport:
    """Run the iteration from a feasible ``z0``.

    ``metrics`` optionally maps each evaluation to a scalar stored as
    ``hypergrad_norm`` in the trace.
    """
    qp, ls = cfg.qcqp, cfg.ls
    eps2 = cfg.eps ** 2
    ev = evaluate(problem, z0)
    trace: list[IterationRecord] = []
    ergodic: list[float] = []
    steps: list[float] = []
    sq_norms: list[float] = []

    def report(status, message=""):
        return SolveReport(
            status=status, final=ev.z, final_f=ev.f, final_h=ev.h, trace=trace,
            ergodic_avg=ergodic, config=cfg, seed=cfg.seed, iterations=len(sq_norms),
            message=message, regularity_flags=flags, final_kkt=final_kkt,
            steps=steps, sq_norms=sq_norms,
        )

    flags = 0
    final_kkt = math.nan
    if ev.h > eps2:
        return report(Status.INFEASIBLE_START,
                      f"h(z0)={ev.h:.6e} exceeds eps^2={eps2:.6e}")

    start = time.perf_counter()
    running = 0.0
    for k in range(cfg.max_iter):
        flags += check_regularity(ev)
        sol = solve_direction(ev, qp)
        dz = sol.delta_z
        sq = float(dz @ dz)
        norm_dz = math.sqrt(sq)
        kkt = kkt_residual(ev, sol.lam, cfg.eps).value
        final_kkt = kkt
        hg = float(metrics(ev)) if metrics is not None else math.nan
        common = dict(
            k=k, f=ev.f, h_minus_eps2=ev.h - eps2, norm_dz=norm_dz, lam=sol.lam,
            kkt_residual=kkt, hypergrad_norm=hg,
            descent_gap=float(ev.grad_f @ dz) + sq, scale=residual_scale(ev, cfg.eps),
        )

        if norm_dz <= cfg.tol_dz:
            trace.append(IterationRecord(t=0.0, backtracks=0,
                                         wall_time_ms=(time.perf_counter() - start) * 1e3, **common))
            return report(Status.STATIONARY)

        try:
            res = backtrack(problem, ev, dz, ls, cfg.eps)
        except MaxBacktracksExceeded as exc:
            trace.append(IterationRecord(t=exc.t, backtracks=ls.max_backtracks,
                                         wall_time_ms=(time.perf_counter() - start) * 1e3, **common))
            return report(Status.LINE_SEARCH_FAILURE, str(exc))

        running += sq
        sq_norms.append(sq)
        steps.append(res.t)
        ergodic.append(running / len(sq_norms))
        if k % cfg.record_every == 0:
            trace.append(IterationRecord(t=res.t, backtracks=res.backtracks,
                                         wall_time_ms=(time.perf_counter() - start) * 1e3, **common))
        ev = evaluate(problem, res.z_new, f=res.f_new, grad_y_g=res.grad_y_g_new)

    final_kkt = kkt_residual(ev, solve_direction(ev, qp).lam, cfg.eps).value
    return report(Status.MAX_ITER)


def init_feasible(problem: BilevelProblem, z0, eps: float, margin: float = 0.1,
                  budget: int = 1000) -> Iterate:
    """Gradient descent on ``h`` until ``h <= (1 - margin) eps^2``.

    Uses Armijo backtracking on ``h``. Returns ``z0`` untouched when it
    already meets the target.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must lie in (0, 1), got {margin!r}")
    target = (1.0 - margin) * eps * eps
    ev = evaluate(problem, z0)
    if ev.h <= target:
        return ev.z
    for _ in range(budget):
        g = np.asarray(ev.grad_h)
        gg = float(g @ g)
        if gg == 0.0:
            break
        t = 1.0
        z = ev.z.data
        for _ in range(60):
            with np.errstate(over="ignore", invalid="ignore"):
                h_new = barrier_value(problem, z - t * g)
            if h_new <= ev.h - 1e-4 * t * gg:
                break
            t *= 0.5
        else:
            break
        ev = evaluate(problem, z - t * g)
        if ev.h <= target:
            return ev.z
    raise InitBudgetExhausted(
        f"h={ev.h:.3e} still above target {target:.3e} after {budget} descent steps")
