"""Search direction from the tilted barrier QCQP.

The subproblem

    min_dz  1/2 ||dz + grad f||^2
    s.t.    grad h^T dz + alpha_b (h - eps^2) + w ||dz||^2 <= 0

is the Euclidean projection of ``-grad f`` onto the ball with center
``c = -grad h / (2w)`` and radius ``r = sqrt(||c||^2 - (alpha_b / w)(h - eps^2))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDual, DegenerateGradient, InfeasibleSubproblem
from .problem import ProblemEval


class Branch(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class QcqpParams:
    w: float = 0.01
    alpha_b: float = 0.1
    eps: float = 0.1

    def __post_init__(self):
        for name in ("w", "alpha_b", "eps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class QcqpSolution:
    delta_z: np.ndarray
    lam: float
    branch: Branch
    center: np.ndarray
    radius: float
    constraint_residual: float


def residual_scale(ev: ProblemEval, eps: float) -> float:
    """Magnitude used to make the exact inequalities assertable in floating point."""
    return max(1.0, float(ev.grad_f @ ev.grad_f), float(ev.grad_h @ ev.grad_h),
               abs(ev.h - eps * eps))


def constraint_value(ev: ProblemEval, params: QcqpParams, dz: np.ndarray) -> float:
    gap = ev.h - params.eps ** 2
    return float(ev.grad_h @ dz + params.alpha_b * gap + params.w * (dz @ dz))


def constraint_minimum(ev: ProblemEval, params: QcqpParams) -> float:
    """Smallest attainable constraint value, reached at ``dz = c``."""
    gap = ev.h - params.eps ** 2
    return float(-(ev.grad_h @ ev.grad_h) / (4.0 * params.w) + params.alpha_b * gap)


def solve_direction(ev: ProblemEval, params: QcqpParams) -> QcqpSolution:
    """Closed-form projection of ``-grad f`` onto the barrier ball."""
    w, ab = params.w, params.alpha_b
    gap = ev.h - params.eps ** 2
    gf, gh = np.asarray(ev.grad_f), np.asarray(ev.grad_h)
    gh_sq = float(gh @ gh)
    if gap == 0.0 and gh_sq == 0.0:
        raise DegenerateGradient("barrier gradient vanishes on the boundary h = eps^2")

    c = -gh / (2.0 * w)
    r2 = gh_sq / (4.0 * w * w) - (ab / w) * gap
    if r2 < 0.0:
        if -r2 <= 1e-12 * residual_scale(ev, params.eps):
            r2 = 0.0
        else:
            raise InfeasibleSubproblem(f"squared ball radius is negative ({r2:.3e}); iterate is infeasible")
    r = math.sqrt(r2)

    d = -gf - c
    dn = float(np.linalg.norm(d))
    # ||d||^2 - r^2 expanded so the ||c||^2 terms cancel analytically
    excess = float(gf @ gf) - float(gf @ gh) / w + (ab / w) * gap
    if excess <= 0.0 or dn == 0.0:
        branch = Branch.INTERIOR
        dz = -gf.copy()
    else:
        branch = Branch.BOUNDARY
        # c + r d/|d| rewritten as -grad f - (|d| - r) d/|d|
        shrink = excess / (dn + r)
        dz = -gf - (shrink / dn) * d

    lam = recover_dual(ev, params, dz, branch=branch)
    return QcqpSolution(
        delta_z=dz,
        lam=lam,
        branch=branch,
        center=c,
        radius=r,
        constraint_residual=constraint_value(ev, params, dz),
    )


def recover_dual(ev: ProblemEval, params: QcqpParams, delta_z: np.ndarray,
                 branch: Branch | None = None) -> float:
    """Multiplier of the barrier constraint from the stationarity condition.

    ``(1 + 2 lam w) dz + grad f + lam grad h = 0`` is solved for ``lam`` in the
    least-squares sense; the result is clamped at zero.
    """
    gf, gh = np.asarray(ev.grad_f), np.asarray(ev.grad_h)
    dz = np.asarray(delta_z, dtype=float)
    if branch is None:
        branch = Branch.INTERIOR if np.array_equal(dz, -gf) else Branch.BOUNDARY
    if branch is Branch.INTERIOR:
        return 0.0
    a = gh + 2.0 * params.w * dz
    a_sq = float(a @ a)
    if a_sq == 0.0:
        raise DegenerateDual("constraint gradient gh + 2 w dz vanishes on the boundary branch")
    return max(0.0, -float((dz + gf) @ a) / a_sq)


def stationarity_residual(ev: ProblemEval, params: QcqpParams, delta_z: np.ndarray, lam: float) -> float:
    dz = np.asarray(delta_z)
    return float(np.linalg.norm((1.0 + 2.0 * lam * params.w) * dz + ev.grad_f + lam * ev.grad_h))
