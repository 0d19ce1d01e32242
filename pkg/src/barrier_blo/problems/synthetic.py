"""Nonconvex synthetic problem and a quadratic testbed with known solution.

Both share the lower level ``g(x, y) = 1/2 ||H y - x||^2``, so
``grad_y g = H^T (H y - x)`` and ``J^T v = (-H v, H^T H v)``.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import ortho_group

from ..problem import BilevelProblem


class _LeastSquaresLower(BilevelProblem):
    def __init__(self, H: np.ndarray):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        self.H = H
        self.HtH = H.T @ H
        self.n, self.m = H.shape

    def dims(self):
        return self.n, self.m

    def eval_g(self, z):
        x, y = z[: self.n], z[self.n :]
        r = self.H @ y - x
        return 0.5 * float(r @ r)

    def grad_y_g(self, z):
        x, y = z[: self.n], z[self.n :]
        return self.HtH @ y - self.H.T @ x

    def vjp_grad_y_g(self, z, v):
        v = np.asarray(v, dtype=float)
        return np.concatenate([-(self.H @ v), self.HtH @ v])

    def hvp_yy(self, z, v):
        return self.HtH @ np.asarray(v, dtype=float)

    def lower_solution(self, x) -> np.ndarray:
        """``y*(x) = argmin_y g(x, y)``."""
        return np.linalg.lstsq(self.H, np.asarray(x, dtype=float), rcond=None)[0]

    def feasible_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.concatenate([x, self.lower_solution(x)])


class SyntheticProblem(_LeastSquaresLower):
    """``f(x, y) = sin(c^T x + d^T y) + log(||x + y||^2 + 1)``."""

    def __init__(self, H, c, d, singular_values=None):
        super().__init__(H)
        if self.n != self.m:
            raise ValueError("synthetic problem needs a square H")
        self.c = np.asarray(c, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.singular_values = (np.linalg.svd(self.H, compute_uv=False)
                                if singular_values is None else np.asarray(singular_values))

    @property
    def condition_number(self) -> float:
        return float(self.singular_values.max() / self.singular_values.min())

    def eval_f(self, z):
        x, y = z[: self.n], z[self.n :]
        s = x + y
        return float(np.sin(self.c @ x + self.d @ y) + np.log(s @ s + 1.0))

    def grad_f(self, z):
        x, y = z[: self.n], z[self.n :]
        s = x + y
        cs = np.cos(self.c @ x + self.d @ y)
        common = 2.0 * s / (s @ s + 1.0)
        return np.concatenate([cs * self.c + common, cs * self.d + common])

    def sample_point(self, rng):
        return rng.standard_normal(2 * self.n)

    def start_point(self, rng, scale: float = 0.5) -> np.ndarray:
        """``x ~ N(0, scale^2 I)`` with ``y = y*(x)``, so ``h = 0``."""
        return self.feasible_point(scale * rng.standard_normal(self.n))


def make_synthetic(seed: int = 0, dim: int = 20, max_condition: float = 10.0,
                   sv_max: float = 1.0) -> SyntheticProblem:
    """Random instance with ``cond(H) <= max_condition``.

    ``H = U diag(s) V^T`` with Haar-random orthogonal ``U, V`` and singular
    values log-uniform on ``[sv_max / max_condition, sv_max]``; ``c, d``
    standard normal. With ``sv_max = 1`` the Lipschitz constant of ``grad h``
    stays O(1), which keeps accepted steps large.
    """
    rng = np.random.default_rng(seed)
    if dim == 1:
        U = V = np.ones((1, 1))
    else:
        U = ortho_group.rvs(dim, random_state=rng)
        V = ortho_group.rvs(dim, random_state=rng)
    s = sv_max * np.exp(rng.uniform(-np.log(max_condition), 0.0, size=dim))
    H = (U * s) @ V.T
    c = rng.standard_normal(dim)
    d = rng.standard_normal(dim)
    prob = SyntheticProblem(H, c, d, singular_values=s)
    assert prob.condition_number <= max_condition * (1 + 1e-12)
    return prob


class QuadraticTestbed(_LeastSquaresLower):
    """Convex quadratic upper level ``f = 1/2 (z - z*)^T Q (z - z*)``.

    ``z* = (x*, y*(x*))`` lies on the lower-level solution set, so it is the
    interior KKT point of the relaxed problem for every ``eps > 0`` (with zero
    multiplier). Lipschitz constants of ``grad f`` and ``grad h`` are exact.
    """

    def __init__(self, H, Q, x_star):
        super().__init__(H)
        self.Q = np.asarray(Q, dtype=float)
        x_star = np.asarray(x_star, dtype=float)
        self.z_star = self.feasible_point(x_star)
        # h(z) = ||A z||^2 with A = [-H^T, H^T H]
        self.A = np.hstack([-self.H.T, self.HtH])

    @property
    def lip_f(self) -> float:
        return float(np.linalg.norm(self.Q, 2))

    @property
    def lip_h(self) -> float:
        return 2.0 * float(np.linalg.norm(self.A, 2)) ** 2

    def eval_f(self, z):
        d = z - self.z_star
        return 0.5 * float(d @ self.Q @ d)

    def grad_f(self, z):
        return self.Q @ (z - self.z_star)

    def sample_point(self, rng):
        return self.z_star + rng.standard_normal(self.n + self.m)


def make_quadratic_testbed(n: int = 1, m: int | None = None, seed: int | None = None) -> QuadraticTestbed:
    """Quadratic testbed. ``seed=None`` gives ``H = I``, ``Q = I``, ``z* = 0``."""
    m = n if m is None else m
    if m > n:
        raise ValueError("testbed needs n >= m so that y*(x) is unique")
    if seed is None:
        return QuadraticTestbed(np.eye(n, m), np.eye(n + m), np.zeros(n))
    rng = np.random.default_rng(seed)
    U = ortho_group.rvs(n, random_state=rng) if n > 1 else np.ones((1, 1))
    V = ortho_group.rvs(m, random_state=rng) if m > 1 else np.ones((1, 1))
    s = rng.uniform(1.0, 3.0, size=m)
    H = (U[:, :m] * s) @ V.T
    R = ortho_group.rvs(n + m, random_state=rng)
    Q = (R * rng.uniform(0.5, 2.0, size=n + m)) @ R.T
    Q = 0.5 * (Q + Q.T)
    return QuadraticTestbed(H, Q, 0.5 * rng.standard_normal(n))
