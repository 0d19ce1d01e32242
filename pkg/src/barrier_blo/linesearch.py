"""Backtracking step selection under a descent test and a barrier safety test."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import MaxBacktracksExceeded, NonFiniteEvaluation
from .problem import BilevelProblem, ProblemEval


@dataclass(frozen=True)
class LineSearchConfig:
    alpha_ls: float = 0.1
    gamma: float = 0.1
    beta: float = 0.5
    t_max: float = 1.0
    max_backtracks: int = 60

    def __post_init__(self):
        for name in ("alpha_ls", "gamma", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise ValueError(f"t_max must be > 0, got {self.t_max!r}")
        if int(self.max_backtracks) != self.max_backtracks or self.max_backtracks < 1:
            raise ValueError(f"max_backtracks must be a positive integer, got {self.max_backtracks!r}")


@dataclass(frozen=True)
class LineSearchResult:
    t: float
    backtracks: int
    z_new: np.ndarray
    f_new: float
    h_new: float
    grad_y_g_new: np.ndarray
    armijo_lhs: float
    armijo_rhs: float
    safety_lhs: float
    safety_rhs: float


def backtrack(problem: BilevelProblem, ev: ProblemEval, delta_z: np.ndarray,
              cfg: LineSearchConfig, eps: float) -> LineSearchResult:
    """Largest ``t = t_max * beta**j`` passing both the Armijo and safety tests.

    Armijo:  f(z + t dz) <= f(z) + alpha_ls * t * grad f^T dz
    Safety:  h(z + t dz) - eps^2 <= (1 - gamma) * (h(z) - eps^2)

    Both are compared with a small absolute slack so that exact-equality
    cases (``dz = 0``) do not backtrack spuriously; from a feasible start the
    accepted point must also satisfy ``h <= eps^2`` exactly.
    """
    z = ev.z.data
    dz = np.asarray(delta_z, dtype=float)
    if not np.all(np.isfinite(dz)):
        raise NonFiniteEvaluation("search direction is non-finite")
    eps2 = eps * eps
    slope = float(ev.grad_f @ dz)
    gap_old = ev.h - eps2
    safety_rhs = (1.0 - cfg.gamma) * gap_old
    f_slack = 1e-14 * max(1.0, abs(ev.f))
    h_slack = 1e-14 * max(1.0, abs(gap_old))

    t = cfg.t_max
    armijo_res = safety_res = math.inf
    for j in range(cfg.max_backtracks + 1):
        z_new = z + t * dz
        with np.errstate(over="ignore", invalid="ignore"):
            f_new = float(problem.eval_f(z_new))
            gyg = np.asarray(problem.grad_y_g(z_new), dtype=float)
            h_new = float(gyg @ gyg)
        if not (math.isfinite(f_new) and math.isfinite(h_new)):
            # a blow-up at a long trial step is treated like a failed test
            armijo_res = safety_res = math.inf
        else:
            armijo_rhs = ev.f + cfg.alpha_ls * t * slope
            safety_lhs = h_new - eps2
            armijo_res = f_new - armijo_rhs
            safety_res = safety_lhs - safety_rhs
            # the slack never admits a point outside the sublevel set
            if armijo_res <= f_slack and safety_res <= h_slack and (safety_lhs <= 0.0 or gap_old > 0.0):
                return LineSearchResult(
                    t=t, backtracks=j, z_new=z_new, f_new=f_new, h_new=h_new,
                    grad_y_g_new=gyg, armijo_lhs=f_new, armijo_rhs=armijo_rhs,
                    safety_lhs=safety_lhs, safety_rhs=safety_rhs,
                )
        if j < cfg.max_backtracks:
            t *= cfg.beta
    raise MaxBacktracksExceeded(
        f"no step in {cfg.max_backtracks} backtracks satisfied both conditions "
        f"(last t={t:.3e}, armijo residual={armijo_res:.3e}, safety residual={safety_res:.3e})",
        t=t, armijo_residual=armijo_res, safety_residual=safety_res,
    )


def lemma_step_bound(cfg: LineSearchConfig, alpha_b: float, w: float, lip_f: float, lip_h: float) -> float:
    """Guaranteed lower bound on the accepted step for Lipschitz constants ``lip_f``, ``lip_h``."""
    b = cfg.beta
    return min(b * 2.0 * (1.0 - cfg.alpha_ls) / lip_f, b * cfg.gamma / alpha_b,
               b * 2.0 * w / lip_h, cfg.t_max)


def check_safety_chain(h_trace: Sequence[float], eps: float, gamma: float, slack: float = 1e-12) -> bool:
    """True iff ``h_k - eps^2 <= (1-gamma)^k (h_0 - eps^2) + slack`` for every k."""
    h = np.asarray(h_trace, dtype=float)
    if h.size == 0:
        return True
    gaps = h - eps * eps
    bound = (1.0 - gamma) ** np.arange(h.size) * gaps[0]
    return bool(np.all(gaps <= bound + slack))
