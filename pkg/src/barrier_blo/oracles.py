"""Independent numerical references used to validate the solver.

Nothing here is on the solver's critical path: finite differences check the
analytic oracles, a dual bisection cross-checks the closed-form direction, and
implicit-function hypergradients supply the convergence metric and a classic
double-loop baseline.
"""

from __future__ import annotations

import enum
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketFailure, IndefiniteHessian, NonFiniteEvaluation
from .problem import BilevelProblem, Iterate, ProblemEval, barrier_value, evaluate
from .qcqp import Branch, QcqpParams, QcqpSolution, constraint_value

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FdConfig:
    step: float = 1e-5

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("finite-difference step must be positive")


def fd_gradient(fun: Callable[[np.ndarray], float], z, cfg: FdConfig = FdConfig()) -> np.ndarray:
    """Central-difference gradient of a scalar field."""
    z = np.array(getattr(z, "data", z), dtype=float)
    out = np.empty(z.size)
    e = np.zeros(z.size)
    for i in range(z.size):
        e[i] = cfg.step
        fp, fm = float(fun(z + e)), float(fun(z - e))
        e[i] = 0.0
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteEvaluation(f"function is non-finite near coordinate {i}")
        out[i] = (fp - fm) / (2.0 * cfg.step)
    return out


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def derivative_errors(problem: BilevelProblem, z, cfg: FdConfig = FdConfig()) -> dict[str, float]:
    """Relative errors of ``grad f``, ``grad_y g`` and ``grad h`` against central differences at ``z``."""
    z = np.asarray(z, dtype=float)
    n, _ = problem.dims()
    x = z[:n]
    ev = evaluate(problem, z)
    fd_f = fd_gradient(problem.eval_f, z, cfg)
    fd_gy = fd_gradient(lambda y: problem.eval_g(np.concatenate([x, y])), z[n:], cfg)
    fd_h = fd_gradient(lambda p: barrier_value(problem, p), z, cfg)
    return {
        "grad_f": relative_error(ev.grad_f, fd_f),
        "grad_y_g": relative_error(ev.grad_y_g, fd_gy),
        "grad_h": relative_error(ev.grad_h, fd_h),
    }


def worst_derivative_errors(problem: BilevelProblem, points: int = 100, seed: int = 0,
                            cfg: FdConfig = FdConfig()) -> dict[str, float]:
    """Worst relative error per oracle over random points drawn by ``problem.sample_point``."""
    rng = np.random.default_rng(seed)
    sample = getattr(problem, "sample_point", None)
    worst = {"grad_f": 0.0, "grad_y_g": 0.0, "grad_h": 0.0}
    for _ in range(points):
        z = sample(rng) if sample is not None else rng.standard_normal(sum(problem.dims()))
        for k, v in derivative_errors(problem, z, cfg).items():
            worst[k] = max(worst[k], v)
    return worst


# --- dual bisection for the direction subproblem -----------------------------

def dual_direction(ev: ProblemEval, params: QcqpParams, lam: float) -> np.ndarray:
    """Minimizer of the Lagrangian for a fixed multiplier."""
    return -(ev.grad_f + lam * ev.grad_h) / (1.0 + 2.0 * lam * params.w)


def dual_residual(ev: ProblemEval, params: QcqpParams, lam: float) -> float:
    """Constraint value at the Lagrangian minimizer; non-increasing in ``lam``."""
    return constraint_value(ev, params, dual_direction(ev, params, lam))


def qcqp_oracle(ev: ProblemEval, params: QcqpParams, tol: float = 0.0,
                lam_max: float = 1e12) -> QcqpSolution:
    """Solve the direction subproblem through its KKT system by bisection on the multiplier.

    With the default ``tol=0`` bisection runs until the bracket collapses in
    floating point.
    """
    psi0 = dual_residual(ev, params, 0.0)
    if psi0 <= 0.0:
        dz = dual_direction(ev, params, 0.0)
        return _oracle_solution(ev, params, dz, 0.0, Branch.INTERIOR)

    lo, hi = 0.0, 1.0
    while dual_residual(ev, params, hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > lam_max:
            raise BracketFailure(f"constraint residual still positive at multiplier {hi:.1e}")

    psi_prev = psi0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        psi = dual_residual(ev, params, mid)
        if abs(psi) <= tol:
            lo = hi = mid
            break
        if psi > 0.0:
            if psi > psi_prev + 1e-12 * max(1.0, abs(psi_prev)):
                logger.info("dual residual not monotone near multiplier %.6e", mid)
            psi_prev = psi
            lo = mid
        else:
            hi = mid
    # hi always carries a non-positive residual, so its direction is feasible
    lam = hi
    return _oracle_solution(ev, params, dual_direction(ev, params, lam), lam, Branch.BOUNDARY)


def _oracle_solution(ev, params, dz, lam, branch):
    return QcqpSolution(
        delta_z=dz, lam=lam, branch=branch, center=-ev.grad_h / (2.0 * params.w),
        radius=math.sqrt(max(0.0, float(ev.grad_h @ ev.grad_h) / (4.0 * params.w ** 2)
                             - params.alpha_b / params.w * (ev.h - params.eps ** 2))),
        constraint_residual=constraint_value(ev, params, dz),
    )


# --- hypergradients ------------------------------------------------------------

class HypergradMethod(enum.Enum):
    EXACT_SOLVE = "ExactSolve"
    CONJUGATE_GRADIENT = "ConjugateGradient"


@dataclass(frozen=True)
class HypergradEstimate:
    F: np.ndarray
    method: HypergradMethod
    inner_residual: float


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       tol: float = 1e-10, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Solve ``A v = b`` for symmetric positive definite ``A`` given as a product.

    Stops once ``||A v - b|| <= tol``. Raises :class:`IndefiniteHessian` on
    non-positive curvature.
    """
    b = np.asarray(b, dtype=float)
    v = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    if max_iter is None:
        max_iter = 20 * b.size + 50
    for _ in range(max_iter):
        if math.sqrt(rr) <= tol:
            break
        Ap = np.asarray(matvec(p), dtype=float)
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise IndefiniteHessian(f"non-positive curvature {curv:.3e} in conjugate gradient")
        a = rr / curv
        v += a * p
        r -= a * Ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    else:
        logger.warning("conjugate gradient stopped at residual %.3e > %.3e", math.sqrt(rr), tol)
    return v, math.sqrt(rr)


def exact_hypergradient(problem: BilevelProblem, z, tol: float = 1e-10,
                        method: HypergradMethod = HypergradMethod.CONJUGATE_GRADIENT,
                        grad_f: np.ndarray | None = None) -> HypergradEstimate:
    """Implicit-function hypergradient ``grad_x f - (grad_yx g)^T (grad_yy g)^{-1} grad_y f`` at ``z``."""
    z = np.asarray(getattr(z, "data", z), dtype=float)
    n, m = problem.dims()
    gf = np.asarray(problem.grad_f(z) if grad_f is None else grad_f, dtype=float)
    gx, gy = gf[:n], gf[n:]
    if method is HypergradMethod.EXACT_SOLVE:
        hess = np.column_stack([problem.hvp_yy(z, e) for e in np.eye(m)])
        if np.linalg.eigvalsh(0.5 * (hess + hess.T))[0] <= 0.0:
            raise IndefiniteHessian("lower-level Hessian is not positive definite")
        v = np.linalg.solve(hess, gy)
        res = float(np.linalg.norm(hess @ v - gy))
    else:
        v, res = conjugate_gradient(lambda p: problem.hvp_yy(z, p), gy, tol=tol)
    F = gx - np.asarray(problem.vjp_grad_y_g(z, v), dtype=float)[:n]
    return HypergradEstimate(F=F, method=method, inner_residual=res)


def hypergrad_norm_metric(problem: BilevelProblem, tol: float = 1e-10) -> Callable[[ProblemEval], float]:
    """Trace metric: ``||F||`` evaluated at the current ``(x, y)``."""
    def metric(ev: ProblemEval) -> float:
        return float(np.linalg.norm(exact_hypergradient(problem, ev.z.data, tol, grad_f=ev.grad_f).F))
    return metric


# --- double-loop baseline --------------------------------------------------------

@dataclass
class AidTrace:
    hypergrad_norm: list[float] = field(default_factory=list)
    lower_residual: list[float] = field(default_factory=list)
    x: np.ndarray | None = None
    y: np.ndarray | None = None


def _inner_descent(problem, x, y, steps):
    """Gradient descent on ``g(x, .)`` with Armijo backtracking."""
    for _ in range(steps):
        z = np.concatenate([x, y])
        gy = np.asarray(problem.grad_y_g(z))
        gg = float(gy @ gy)
        if gg == 0.0:
            break
        g0 = problem.eval_g(z)
        t = 1.0
        for _ in range(60):
            if problem.eval_g(np.concatenate([x, y - t * gy])) <= g0 - 1e-4 * t * gg:
                break
            t *= 0.5
        y = y - t * gy
    return y


def aid_baseline(problem: BilevelProblem, x0, y0=None, inner_steps: int = 50, outer_steps: int = 100,
                 cg_tol: float = 1e-10, alpha_ls: float = 0.1, beta: float = 0.5,
                 max_backtracks: int = 30) -> AidTrace:
    """Approximate implicit differentiation: inner descent on y, CG hypergradient, Armijo step on x.

    The outer line search re-solves the inner problem at each trial ``x``
    (warm-started) and tests sufficient decrease of ``f``.
    """
    n, m = problem.dims()
    x = np.array(x0, dtype=float)
    y = np.zeros(m) if y0 is None else np.array(y0, dtype=float)
    y = _inner_descent(problem, x, y, inner_steps)
    out = AidTrace()

    def record(x, y):
        z = np.concatenate([x, y])
        F = exact_hypergradient(problem, z, cg_tol).F
        out.hypergrad_norm.append(float(np.linalg.norm(F)))
        out.lower_residual.append(float(np.linalg.norm(problem.grad_y_g(z))))
        return F

    F = record(x, y)
    for _ in range(outer_steps):
        f0 = problem.eval_f(np.concatenate([x, y]))
        FF = float(F @ F)
        t = 1.0
        for _ in range(max_backtracks):
            x_new = x - t * F
            y_new = _inner_descent(problem, x_new, y, inner_steps)
            if problem.eval_f(np.concatenate([x_new, y_new])) <= f0 - alpha_ls * t * FF:
                break
            t *= beta
        x, y = x_new, y_new
        F = record(x, y)
    out.x, out.y = x, y
    return out


# --- random subproblem instances ------------------------------------------------

def random_feasible_instance(rng: np.random.Generator, boundary: bool = False,
                             dim_range: tuple[int, int] = (2, 50)) -> tuple[ProblemEval, QcqpParams]:
    """Random feasible direction subproblem.

    Total dimension uniform in ``dim_range``, ``w`` log-uniform on
    ``[1e-4, 1]``, ``alpha_b`` log-uniform on ``[1e-3, 10]`` and
    ``h - eps^2`` uniform on ``[-1, 0]`` (exactly 0 when ``boundary``).
    Gradients have random direction and log-uniform magnitude in ``[0.1, 10]``.
    """
    d = int(rng.integers(dim_range[0], dim_range[1] + 1))
    m = int(rng.integers(1, d))
    w = float(10 ** rng.uniform(-4, 0))
    alpha_b = float(10 ** rng.uniform(-3, 1))
    eps = 1.0
    gap = 0.0 if boundary else float(-rng.uniform(0.0, 1.0))
    h = eps * eps + gap

    def vec(size):
        v = rng.standard_normal(size)
        return v / np.linalg.norm(v) * 10 ** rng.uniform(-1, 1)

    # only ||grad_y g||^2 enters the subproblem; a signed basis vector keeps h = eps^2 exact
    gy = np.zeros(m)
    gy[rng.integers(m)] = math.sqrt(h) * rng.choice([-1.0, 1.0])
    gh = vec(d) if h > 0 else np.zeros(d)
    ev = ProblemEval(z=Iterate(np.zeros(d), d - m, m), f=0.0, grad_f=vec(d),
                     grad_y_g=gy, h=float(gy @ gy), grad_h=gh)
    return ev, QcqpParams(w=w, alpha_b=alpha_b, eps=eps)
