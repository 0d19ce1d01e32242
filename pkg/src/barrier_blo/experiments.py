"""Building problems from configs, running them, and serializing results."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .linesearch import check_safety_chain
from .oracles import aid_baseline, hypergrad_norm_metric
from .problems import Dataset, DhcSplits, corrupt_labels, load_idx, make_dhc, make_quadratic_testbed, make_synthetic
from .solver import SolveReport, Status, init_feasible, solve

TRACE_HEADER = ["k", "f", "h_minus_eps2", "norm_dz", "t", "lambda", "backtracks",
                "kkt_residual", "hypergrad_norm", "wall_ms"]

# RNG stream ids under each run seed
_PROBLEM_STREAM, _START_STREAM = 0, 1


@dataclass
class Instance:
    problem: object
    z0: np.ndarray
    extra: dict = field(default_factory=dict)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _idx_splits(cfg: ExperimentConfig, rng) -> DhcSplits:
    train_all = load_idx(cfg.idx_train_images, cfg.idx_train_labels, cfg.idx_limit)
    test = load_idx(cfg.idx_test_images, cfg.idx_test_labels,
                    cfg.num_test if cfg.idx_limit is None else min(cfg.num_test, cfg.idx_limit))
    n_tr, n_val = cfg.num_train, cfg.num_val
    order = rng.permutation(len(train_all))
    tr, va = order[:n_tr], order[n_tr : n_tr + n_val]
    labels, mask = corrupt_labels(train_all.labels[tr], cfg.corruption_rate, cfg.num_classes, rng)
    return DhcSplits(
        Dataset(train_all.features[tr], labels, mask),
        Dataset(train_all.features[va], train_all.labels[va], np.zeros(len(va), dtype=bool)),
        test,
    )


def build_instance(cfg: ExperimentConfig, seed: int) -> Instance:
    """Problem and starting point for one run; deterministic in ``seed``."""
    pseed = seed if cfg.problem_seed is None else cfg.problem_seed
    start_rng = _rng(seed, _START_STREAM)
    if cfg.problem == "synthetic":
        prob = make_synthetic(pseed, dim=cfg.dim, max_condition=cfg.max_condition)
        inst = Instance(prob, prob.start_point(start_rng, cfg.start_scale))
    elif cfg.problem == "quadratic":
        prob = make_quadratic_testbed(cfg.n, cfg.m, seed=pseed)
        x0 = prob.z_star[: prob.n] + cfg.start_scale * start_rng.standard_normal(prob.n)
        inst = Instance(prob, prob.feasible_point(x0))
    else:
        spec = cfg.dhc_spec(pseed)
        splits = _idx_splits(cfg, _rng(pseed, _PROBLEM_STREAM)) if cfg.idx_train_images else None
        prob, splits = make_dhc(spec, splits)
        x0 = np.zeros(prob.n)
        y0 = prob.lower_solution(x0)
        inst = Instance(prob, np.concatenate([x0, y0]), {"splits": splits, "y_uniform": y0})
    if cfg.start == "random":
        inst.z0 = cfg.start_scale * start_rng.standard_normal(inst.z0.size)
    return inst


@dataclass
class RunResult:
    seed: int
    w: float
    report: SolveReport | None
    summary: dict


def _json_safe(v):
    """Non-finite floats become ``null``; containers are converted recursively."""
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def run_barrier(cfg: ExperimentConfig, seed: int, w: float | None = None) -> RunResult:
    inst = build_instance(cfg, seed)
    scfg = cfg.solver_config(seed, w)
    z0 = inst.z0
    if cfg.init:
        z0 = init_feasible(inst.problem, z0, cfg.eps, cfg.init_margin, cfg.init_budget).data
    metric = hypergrad_norm_metric(inst.problem) if cfg.hypergrad else None
    rep = solve(inst.problem, z0, scfg, metrics=metric)
    summary = {
        "status": rep.status.value,
        "iterations": rep.iterations,
        "final_f": rep.final_f,
        "final_sqrt_h": math.sqrt(rep.final_h),
        "final_kkt_residual": rep.final_kkt,
        "seed": seed,
        "w": scfg.w,
        "message": rep.message,
        "safety_chain_ok": check_safety_chain([r.h_minus_eps2 + cfg.eps ** 2 for r in rep.trace],
                                              cfg.eps, cfg.gamma) if cfg.record_every == 1 else None,
        "config": scfg.to_dict(),
    }
    if cfg.problem == "dhc" and rep.status is not Status.INFEASIBLE_START:
        prob, splits = inst.problem, inst.extra["splits"]
        z = rep.final.data
        sig = 1.0 / (1.0 + np.exp(-z[: prob.n]))
        mask = splits.train.corrupted_mask
        summary["dhc"] = {
            "val_loss_initial": prob.eval_f(inst.z0),
            "val_loss_final": rep.final_f,
            "test_accuracy": prob.accuracy(z[prob.n :], splits.test),
            "test_accuracy_uniform_weights": prob.accuracy(inst.extra["y_uniform"], splits.test),
            "mean_weight_corrupted": float(sig[mask].mean()) if mask.any() else None,
            "mean_weight_clean": float(sig[~mask].mean()) if (~mask).any() else None,
        }
    return RunResult(seed, scfg.w, rep, _json_safe(summary))


def write_trace(path, report: SolveReport):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_HEADER)
        for r in report.trace:
            wr.writerow([r.k, repr(r.f), repr(r.h_minus_eps2), repr(r.norm_dz), repr(r.t), repr(r.lam),
                         r.backtracks, repr(r.kkt_residual), repr(r.hypergrad_norm), repr(r.wall_time_ms)])


def read_trace(path) -> dict[str, list]:
    """Columns of a trace CSV; ``k`` and ``backtracks`` as ints, the rest as floats."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header != TRACE_HEADER:
        raise ValueError(f"unexpected trace header {header}")
    cols = {h: [] for h in header}
    for row in body:
        for h, v in zip(header, row):
            cols[h].append(int(v) if h in ("k", "backtracks") else float(v))
    return cols


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def first_index(values, pred):
    return next((i for i, v in enumerate(values) if pred(v)), None)


def ablation_row(cfg: ExperimentConfig, w: float, results: list[RunResult]) -> dict:
    """Per-w iteration-to-threshold statistics over seeds (``None`` = never reached)."""
    near, hits = [], {thr: [] for thr in cfg.thresholds}
    for res in results:
        sqrt_h = [math.sqrt(max(r.h_minus_eps2 + cfg.eps ** 2, 0.0)) for r in res.report.trace]
        ks = [r.k for r in res.report.trace]
        i = first_index(sqrt_h, lambda v: v >= 0.9 * cfg.eps)
        near.append(None if i is None else ks[i])
        F = [r.hypergrad_norm for r in res.report.trace]
        for thr in cfg.thresholds:
            j = first_index(F, lambda v: v <= thr)
            hits[thr].append(None if j is None else ks[j])

    def med(xs):
        return float(np.median([math.inf if x is None else x for x in xs]))

    return {
        "w": w,
        "first_k_near_boundary": near,
        "median_first_k_near_boundary": med(near),
        "first_k_hypergrad_below": {repr(t): v for t, v in hits.items()},
        "median_first_k_hypergrad_below": {repr(t): med(v) for t, v in hits.items()},
    }


def compare_rows(cfg: ExperimentConfig, seed: int, with_barrier: bool = True):
    """Aligned per-iteration metrics for the barrier method and the double-loop baseline."""
    inst = build_instance(cfg, seed)
    prob = inst.problem
    n = prob.dims()[0]
    base = aid_baseline(prob, inst.z0[:n], inst.z0[n:], inner_steps=cfg.baseline_inner_steps,
                        outer_steps=cfg.baseline_outer_steps, alpha_ls=cfg.alpha_ls, beta=cfg.beta)
    barrier = None
    if with_barrier:
        barrier = solve(prob, inst.z0, cfg.solver_config(seed), metrics=hypergrad_norm_metric(prob))
    length = max(len(base.hypergrad_norm), len(barrier.trace) if barrier else 0)
    rows = []
    for k in range(length):
        row = {"k": k, "barrier_hypergrad_norm": "", "barrier_sqrt_h": "",
               "baseline_hypergrad_norm": "", "baseline_sqrt_h": "", "baseline_violation": ""}
        if barrier is not None and k < len(barrier.trace):
            r = barrier.trace[k]
            row["barrier_hypergrad_norm"] = repr(r.hypergrad_norm)
            row["barrier_sqrt_h"] = repr(math.sqrt(max(r.h_minus_eps2 + cfg.eps ** 2, 0.0)))
        if k < len(base.hypergrad_norm):
            row["baseline_hypergrad_norm"] = repr(base.hypergrad_norm[k])
            row["baseline_sqrt_h"] = repr(base.lower_residual[k])
            row["baseline_violation"] = int(base.lower_residual[k] > cfg.eps)
        rows.append(row)
    return rows, barrier, base
