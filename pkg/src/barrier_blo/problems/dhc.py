"""Data hyper-cleaning with a linear softmax classifier.

Upper variables are one logit per training sample (weight ``sigmoid(x_i)``),
lower variables are the classifier weights ``W`` (``num_classes x
(feature_dim + 1)``, bias last), flattened row-major.

    f(x, W) = mean validation cross-entropy of W
    g(x, W) = (1/N) sum_i sigmoid(x_i) CE_i(W) + reg_coeff ||W||^2
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax, softmax

from ..errors import ConfigError
from ..problem import BilevelProblem


@dataclass(frozen=True)
class DhcSpec:
    num_train: int = 200
    num_val: int = 200
    num_test: int = 1000
    feature_dim: int = 5
    num_classes: int = 3
    corruption_rate: float = 0.25
    # L2 weight on the classifier parameters in the lower level
    reg_coeff: float = 1e-3
    separation: float = 3.0
    seed: int = 0

    def validate(self):
        for name in ("num_train", "num_val", "num_test", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ConfigError(f"corruption_rate must lie in [0, 1), got {self.corruption_rate}")
        if not self.reg_coeff > 0:
            raise ConfigError(f"reg_coeff must be > 0, got {self.reg_coeff}")
        if not self.separation >= 3.0:
            raise ConfigError(f"separation must be >= 3, got {self.separation}")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    # generator ground truth; never shown to the solver
    corrupted_mask: np.ndarray

    def __post_init__(self):
        if not (len(self.features) == len(self.labels) == len(self.corrupted_mask)):
            raise ValueError("features, labels and mask must have equal length")

    def __len__(self):
        return len(self.labels)


class DhcSplits(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset


def _class_means(rng, num_classes, dim, separation):
    """Class means at distance ``separation`` from the origin, pairwise at least ``separation`` apart."""
    if num_classes <= dim:
        # orthogonal directions: pairwise distance separation * sqrt(2)
        return np.linalg.qr(rng.standard_normal((dim, num_classes)))[0].T * separation
    means = rng.standard_normal((num_classes, dim))
    d = np.linalg.norm(means[:, None] - means[None], axis=-1)
    closest = d[~np.eye(num_classes, dtype=bool)].min()
    return means * (separation / closest)


def corrupt_labels(labels, rate, num_classes, rng):
    """Reassign ``floor(rate * N)`` labels uniformly to a different class."""
    labels = np.array(labels, dtype=np.int64)
    n_bad = int(math.floor(rate * len(labels)))
    mask = np.zeros(len(labels), dtype=bool)
    idx = rng.choice(len(labels), size=n_bad, replace=False)
    mask[idx] = True
    labels[idx] = (labels[idx] + rng.integers(1, num_classes, size=n_bad)) % num_classes
    return labels, mask


def generate_blobs(spec: DhcSpec) -> DhcSplits:
    """Gaussian blobs with unit within-class variance; only training labels are corrupted."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = _class_means(rng, spec.num_classes, spec.feature_dim, spec.separation)

    def draw(count):
        labels = rng.integers(0, spec.num_classes, size=count)
        return means[labels] + rng.standard_normal((count, spec.feature_dim)), labels

    a_tr, b_tr = draw(spec.num_train)
    a_val, b_val = draw(spec.num_val)
    a_te, b_te = draw(spec.num_test)
    b_tr, mask = corrupt_labels(b_tr, spec.corruption_rate, spec.num_classes, rng)
    return DhcSplits(
        Dataset(a_tr, b_tr, mask),
        Dataset(a_val, b_val, np.zeros(spec.num_val, dtype=bool)),
        Dataset(a_te, b_te, np.zeros(spec.num_test, dtype=bool)),
    )


def _augment(a):
    return np.hstack([a, np.ones((len(a), 1))])


class DhcProblem(BilevelProblem):
    def __init__(self, train: Dataset, val: Dataset, num_classes: int, reg_coeff: float = 1e-3):
        self.A_tr = _augment(np.asarray(train.features, dtype=float))
        self.A_val = _augment(np.asarray(val.features, dtype=float))
        self.E_tr = np.eye(num_classes)[train.labels]
        self.E_val = np.eye(num_classes)[val.labels]
        self.b_tr = np.asarray(train.labels)
        self.b_val = np.asarray(val.labels)
        self.C = num_classes
        self.p = self.A_tr.shape[1]
        self.reg = reg_coeff
        self.n = len(train)
        self.m = self.C * self.p

    def dims(self):
        return self.n, self.m

    def weights(self, z) -> np.ndarray:
        return np.asarray(z[self.n :]).reshape(self.C, self.p)

    @staticmethod
    def _ce(A, b, W):
        """Per-sample cross-entropy and softmax probabilities."""
        logp = log_softmax(A @ W.T, axis=1)
        return -logp[np.arange(len(b)), b], np.exp(logp)

    def eval_f(self, z):
        ce, _ = self._ce(self.A_val, self.b_val, self.weights(z))
        return float(ce.mean())

    def grad_f(self, z):
        W = self.weights(z)
        P = softmax(self.A_val @ W.T, axis=1)
        gW = (P - self.E_val).T @ self.A_val / len(self.b_val)
        return np.concatenate([np.zeros(self.n), gW.ravel()])

    def eval_g(self, z):
        x, W = z[: self.n], self.weights(z)
        ce, _ = self._ce(self.A_tr, self.b_tr, W)
        return float(expit(x) @ ce / self.n + self.reg * np.sum(W * W))

    def grad_y_g(self, z):
        x, W = z[: self.n], self.weights(z)
        P = softmax(self.A_tr @ W.T, axis=1)
        gW = (expit(x)[:, None] * (P - self.E_tr)).T @ self.A_tr / self.n + 2.0 * self.reg * W
        return gW.ravel()

    def vjp_grad_y_g(self, z, v):
        x, W = z[: self.n], self.weights(z)
        V = np.asarray(v, dtype=float).reshape(self.C, self.p)
        P = softmax(self.A_tr @ W.T, axis=1)
        s = expit(x)
        dlogit = self.A_tr @ V.T
        # x-block: sigmoid'(x_i) <grad_W CE_i, V> / N
        gx = s * (1.0 - s) * np.sum((P - self.E_tr) * dlogit, axis=1) / self.n
        # y-block: sum_i sigmoid(x_i) Hess_i V / N + 2 reg V, softmax Jacobian applied per row
        dP = P * dlogit - P * np.sum(P * dlogit, axis=1, keepdims=True)
        gy = (s[:, None] * dP).T @ self.A_tr / self.n + 2.0 * self.reg * V
        return np.concatenate([gx, gy.ravel()])

    def sample_point(self, rng):
        return np.concatenate([rng.standard_normal(self.n), 0.5 * rng.standard_normal(self.m)])

    def lower_solution(self, x, y0=None, gtol: float = 1e-12) -> np.ndarray:
        """Minimize ``g(x, .)`` (strongly convex) with L-BFGS."""
        x = np.asarray(x, dtype=float)
        y0 = np.zeros(self.m) if y0 is None else np.asarray(y0, dtype=float)
        res = minimize(lambda y: self.eval_g(np.concatenate([x, y])), y0,
                       jac=lambda y: self.grad_y_g(np.concatenate([x, y])),
                       method="L-BFGS-B", options={"gtol": gtol, "ftol": 0.0, "maxiter": 10000})
        return res.x

    def accuracy(self, y, data: Dataset) -> float:
        """Classification accuracy of flattened weights ``y`` on ``data``."""
        W = np.asarray(y, dtype=float).reshape(self.C, self.p)
        pred = np.argmax(_augment(np.asarray(data.features, dtype=float)) @ W.T, axis=1)
        return float(np.mean(pred == data.labels))


def make_dhc(spec: DhcSpec, splits: DhcSplits | None = None) -> tuple[DhcProblem, DhcSplits]:
    """Build the hyper-cleaning problem from ``spec`` (blobs unless ``splits`` is given)."""
    spec.validate()
    if splits is None:
        splits = generate_blobs(spec)
    for part in splits:
        if len(part) and (part.labels.min() < 0 or part.labels.max() >= spec.num_classes):
            raise ConfigError("labels fall outside [0, num_classes)")
        if len(part) and part.features.shape[1] != splits.train.features.shape[1]:
            raise ConfigError("feature dimensions differ between splits")
    return DhcProblem(splits.train, splits.val, spec.num_classes, spec.reg_coeff), splits
