"""Bilevel problem interface and the barrier function built from it.

A problem supplies first-order oracles for the upper objective ``f`` and the
lower-level gradient ``grad_y g``, plus a vector-Jacobian product of
``z -> grad_y g(z)``. From these we derive the barrier

    h(z) = ||grad_y g(z)||^2,     grad h(z) = 2 J(z)^T grad_y g(z),

where ``J`` is the ``m x (n+m)`` Jacobian of ``grad_y g``.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteEvaluation

logger = logging.getLogger(__name__)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Iterate:
    """Concatenated decision vector ``z = (x, y)`` with its split."""

    data: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        data = _frozen(np.ravel(self.data))
        object.__setattr__(self, "data", data)
        if self.n < 1 or self.m < 1:
            raise ValueError(f"dimensions must be positive, got n={self.n}, m={self.m}")
        if data.size != self.n + self.m:
            raise ValueError(f"iterate has length {data.size}, expected n+m={self.n + self.m}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteEvaluation("iterate contains non-finite entries")

    @property
    def x(self) -> np.ndarray:
        return self.data[: self.n]

    @property
    def y(self) -> np.ndarray:
        return self.data[self.n :]

    @classmethod
    def from_parts(cls, x, y) -> Iterate:
        x = np.ravel(np.asarray(x, dtype=float))
        y = np.ravel(np.asarray(y, dtype=float))
        return cls(np.concatenate([x, y]), x.size, y.size)


class BilevelProblem(ABC):
    """Oracle access to a bilevel problem ``min f(x,y) s.t. y in argmin g(x,.)``.

    All methods take the concatenated vector ``z`` as a 1-D array and must be
    free of side effects.
    """

    @abstractmethod
    def dims(self) -> tuple[int, int]:
        """Return ``(n, m)``, the upper and lower dimensions."""

    @abstractmethod
    def eval_f(self, z: np.ndarray) -> float: ...

    @abstractmethod
    def grad_f(self, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def eval_g(self, z: np.ndarray) -> float: ...

    @abstractmethod
    def grad_y_g(self, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def vjp_grad_y_g(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Return ``J(z)^T v`` (length ``n+m``) for ``v`` of length ``m``."""

    def hvp_yy(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Lower-level Hessian-vector product ``grad_yy g(z) v``.

        The y-block of ``J^T v`` is exactly this product because the Hessian
        is symmetric; subclasses may override with something cheaper.
        """
        n, _ = self.dims()
        return self.vjp_grad_y_g(z, v)[n:]

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n, _ = self.dims()
        return z[:n], z[n:]

    def iterate(self, z) -> Iterate:
        if isinstance(z, Iterate):
            if (z.n, z.m) != self.dims():
                raise ValueError(f"iterate split {(z.n, z.m)} does not match problem dims {self.dims()}")
            return z
        n, m = self.dims()
        return Iterate(np.asarray(z, dtype=float), n, m)


@dataclass(frozen=True)
class ProblemEval:
    """Immutable snapshot of every quantity the solver needs at one iterate."""

    z: Iterate
    f: float
    grad_f: np.ndarray
    grad_y_g: np.ndarray
    h: float
    grad_h: np.ndarray

    @property
    def n(self) -> int:
        return self.z.n

    @property
    def m(self) -> int:
        return self.z.m


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteEvaluation(f"oracle {name} returned non-finite values")


def evaluate(problem: BilevelProblem, z, *, f: float | None = None,
             grad_y_g: np.ndarray | None = None) -> ProblemEval:
    """Evaluate ``f``, its gradient, and the barrier with its gradient at ``z``.

    ``f`` and ``grad_y_g`` may be passed in when the caller already computed
    them at exactly this point (the line search does).
    """
    it = problem.iterate(z)
    zd = it.data
    if f is None:
        f = problem.eval_f(zd)
    f = float(f)
    _check_finite("eval_f", f)
    gf = _frozen(problem.grad_f(zd))
    _check_finite("grad_f", gf)
    if grad_y_g is None:
        grad_y_g = problem.grad_y_g(zd)
    gyg = _frozen(grad_y_g)
    _check_finite("grad_y_g", gyg)
    h = float(gyg @ gyg)
    if h == 0.0:
        gh = _frozen(np.zeros(it.n + it.m))
    else:
        gh = _frozen(2.0 * np.asarray(problem.vjp_grad_y_g(zd, gyg), dtype=float))
        _check_finite("vjp_grad_y_g", gh)
    if gf.shape != (it.n + it.m,) or gyg.shape != (it.m,) or gh.shape != (it.n + it.m,):
        raise ValueError("oracle output shapes do not match problem dims")
    return ProblemEval(z=it, f=f, grad_f=gf, grad_y_g=gyg, h=h, grad_h=gh)


def barrier_value(problem: BilevelProblem, z: np.ndarray) -> float:
    """``h(z)`` alone, without the Jacobian product."""
    gyg = np.asarray(problem.grad_y_g(z), dtype=float)
    return float(gyg @ gyg)


def check_regularity(ev: ProblemEval, tol: float = 1e-9) -> bool:
    """Flag points where ``h > 0`` but ``grad h`` (numerically) vanishes.

    Returns True when the lower-level regularity condition looks violated.
    Purely diagnostic.
    """
    violated = ev.h > tol and float(np.linalg.norm(ev.grad_h)) <= tol * max(1.0, ev.h)
    if violated:
        logger.warning("regularity violation: h=%.3e but ||grad h||=%.3e", ev.h,
                       float(np.linalg.norm(ev.grad_h)))
    return violated
