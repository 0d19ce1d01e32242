"""Flat ``key = value`` experiment configuration with a typed schema.

Lines are ``key = value``; ``#`` starts a comment; list values are
comma-separated. Unknown keys and badly typed values raise
:class:`~barrier_blo.errors.ConfigError` naming the offending field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .problems import DhcSpec
from .solver import SolverConfig

PROBLEMS = ("synthetic", "quadratic", "dhc")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(conv):
    def parse(text: str):
        items = [s.strip() for s in text.split(",")]
        return [conv(s) for s in items if s]
    return parse


def _parse_optional_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "none") else int(t)


@dataclass
class ExperimentConfig:
    # problem selection and parameters
    problem: str = "synthetic"
    problem_seed: int | None = None
    dim: int = 20
    max_condition: float = 10.0
    n: int = 3
    m: int | None = None
    num_train: int = 200
    num_val: int = 200
    num_test: int = 1000
    feature_dim: int = 5
    num_classes: int = 3
    corruption_rate: float = 0.25
    reg_coeff: float = 1e-3
    separation: float = 3.0
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    idx_limit: int | None = None
    # starting point
    start: str = "feasible"
    start_scale: float = 0.5
    init: bool = False
    init_margin: float = 0.1
    init_budget: int = 1000
    # solver
    eps: float = 0.1
    w: float = 0.01
    alpha_b: float = 0.1
    alpha_ls: float = 0.1
    gamma: float = 0.1
    beta: float = 0.5
    t_max: float = 1.0
    max_backtracks: int = 60
    max_iter: int = 2000
    tol_dz: float = 1e-8
    record_every: int = 1
    # experiment
    seeds: list[int] = field(default_factory=lambda: [0])
    grid: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    hypergrad: bool = True
    thresholds: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    baseline_inner_steps: int = 50
    baseline_outer_steps: int = 200
    compare_mode: str = "both"
    out: str = "results"

    def solver_config(self, seed: int = 0, w: float | None = None) -> SolverConfig:
        return SolverConfig(
            eps=self.eps, w=self.w if w is None else w, alpha_b=self.alpha_b,
            alpha_ls=self.alpha_ls, gamma=self.gamma, beta=self.beta, t_max=self.t_max,
            max_backtracks=self.max_backtracks, max_iter=self.max_iter, tol_dz=self.tol_dz,
            seed=seed, record_every=self.record_every,
        )

    def dhc_spec(self, seed: int) -> DhcSpec:
        return DhcSpec(
            num_train=self.num_train, num_val=self.num_val, num_test=self.num_test,
            feature_dim=self.feature_dim, num_classes=self.num_classes,
            corruption_rate=self.corruption_rate, reg_coeff=self.reg_coeff,
            separation=self.separation, seed=seed,
        )

    def validate(self) -> ExperimentConfig:
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.problem not in PROBLEMS:
            bad("problem", f"must be one of {', '.join(PROBLEMS)}, got {self.problem!r}")
        for name in ("eps", "w", "alpha_b", "t_max", "start_scale", "max_condition"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                bad(name, f"must be > 0, got {v!r}")
        for name in ("alpha_ls", "gamma", "beta", "init_margin"):
            v = getattr(self, name)
            if not 0 < v < 1:
                bad(name, f"must lie in (0, 1), got {v!r}")
        for name in ("max_iter", "max_backtracks", "record_every", "dim", "n"):
            if getattr(self, name) < 1:
                bad(name, f"must be >= 1, got {getattr(self, name)!r}")
        if self.tol_dz < 0:
            bad("tol_dz", f"must be >= 0, got {self.tol_dz!r}")
        if self.init_budget < 0:
            bad("init_budget", "must be >= 0")
        if not self.seeds:
            bad("seeds", "must list at least one seed")
        if any(s < 0 or s >= 2 ** 64 for s in self.seeds):
            bad("seeds", "must be 64-bit unsigned integers")
        if not self.grid:
            bad("grid", "must list at least one w value")
        if any(not (math.isfinite(v) and v > 0) for v in self.grid):
            bad("grid", "every w must be > 0")
        if self.start not in ("feasible", "random"):
            bad("start", f"must be 'feasible' or 'random', got {self.start!r}")
        if self.compare_mode not in ("both", "baseline-only"):
            bad("compare_mode", f"must be 'both' or 'baseline-only', got {self.compare_mode!r}")
        if self.problem == "dhc":
            try:
                self.dhc_spec(0).validate()
            except ConfigError as exc:
                raise ConfigError(f"dhc: {exc}") from None
        return self


_CONVERTERS = {
    "int": int, "float": float, "bool": _parse_bool, "str": str,
    "int | None": _parse_optional_int, "list[int]": _parse_list(int),
    "list[float]": _parse_list(float),
}
_SCHEMA = {f.name: _CONVERTERS[f.type] for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})")
        try:
            values[key] = _SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from None
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ", ".join(repr(x) for x in v)
        elif v is None:
            v = "none"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
