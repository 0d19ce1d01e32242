"""``barrier-blo`` command line: solve, ablate, gradcheck, qcqp-selftest, compare.

Exit codes: 0 success, 1 check failure, 2 infeasible start, 3 line-search
failure, 4 configuration error. ``BARRIER_BLO_OUT`` overrides ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ExperimentConfig, dump_config, load_config
from .errors import BarrierBloError, ConfigError
from .linesearch import check_safety_chain
from .oracles import qcqp_oracle, random_feasible_instance, worst_derivative_errors
from .qcqp import solve_direction
from .solver import Status

EXIT_OK, EXIT_CHECK, EXIT_INFEASIBLE, EXIT_LINESEARCH, EXIT_CONFIG = 0, 1, 2, 3, 4

GRADCHECK_TOL = 1e-5
SELFTEST_TOL = 1e-8
# every n-th self-test instance sits exactly on the boundary h = eps^2
SELFTEST_BOUNDARY_EVERY = 10


def _err(msg: str):
    print(f"barrier-blo: {msg}", file=sys.stderr)


def _out_dir(args, cfg: ExperimentConfig | None, sub: str) -> Path:
    base = os.environ.get("BARRIER_BLO_OUT") or args.out or (cfg.out if cfg else "results")
    path = Path(base) / sub
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed_override is not None:
        cfg = dataclasses.replace(cfg, seeds=[args.seed_override]).validate()
    return cfg


def _map(fn, jobs: list[tuple], n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(fn, *j) for j in jobs]
        return [f.result() for f in futures]


def _status_exit_code(statuses) -> int:
    statuses = set(statuses)
    if Status.INFEASIBLE_START in statuses:
        return EXIT_INFEASIBLE
    if Status.LINE_SEARCH_FAILURE in statuses:
        return EXIT_LINESEARCH
    return EXIT_OK


def _report_failures(results: list[ex.RunResult]):
    for r in results:
        if r.report.status in (Status.INFEASIBLE_START, Status.LINE_SEARCH_FAILURE):
            _err(f"seed {r.seed}, w={r.w!r}: {r.report.status.value}: {r.report.message}")


def _trace_name(seed: int, w: float | None = None) -> str:
    return f"trace_seed{seed}.csv" if w is None else f"trace_w{w!r}_seed{seed}.csv"


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "solve")
    results = _map(ex.run_barrier, [(cfg, s) for s in cfg.seeds], args.jobs)
    for r in results:
        ex.write_trace(out / _trace_name(r.seed), r.report)
    ex.write_json(out / "summary.json", {"runs": [r.summary for r in results]})
    (out / "config.txt").write_text(dump_config(cfg))
    for r in results:
        s = r.summary
        print(f"seed {r.seed}: {s['status']} after {s['iterations']} iterations, "
              f"f={s['final_f']!r}, sqrt(h)={s['final_sqrt_h']!r}")
    _report_failures(results)
    return _status_exit_code(r.report.status for r in results)


def cmd_ablate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "ablate")
    jobs = [(cfg, s, w) for w in cfg.grid for s in cfg.seeds]
    results = _map(ex.run_barrier, jobs, args.jobs)
    for r in results:
        ex.write_trace(out / _trace_name(r.seed, r.w), r.report)
    table = [ex.ablation_row(cfg, w, [r for r in results if r.w == w]) for w in cfg.grid]
    ex.write_json(out / "summary.json", {
        "runs": [r.summary for r in results],
        "table": table,
    })
    print("w, median first k with sqrt(h) >= 0.9 eps, " +
          ", ".join(f"median first k with |F| <= {t!r}" for t in cfg.thresholds))
    for row in table:
        meds = row["median_first_k_hypergrad_below"].values()
        print(f"{row['w']!r}, {row['median_first_k_near_boundary']}, " + ", ".join(str(m) for m in meds))
    _report_failures(results)
    return _status_exit_code(r.report.status for r in results)


def gradcheck_problem(problem, points: int = 20, seed: int = 0, tol: float = GRADCHECK_TOL) -> int:
    """Print the worst finite-difference error per oracle; exit code 0 iff all are within ``tol``."""
    worst = worst_derivative_errors(problem, points=points, seed=seed)
    ok = True
    for name, err in worst.items():
        flag = "ok" if err <= tol else "FAIL"
        ok &= err <= tol
        print(f"{name}: worst relative error {err:.3e} [{flag}]")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    code = EXIT_OK
    for seed in cfg.seeds:
        problem = ex.build_instance(cfg, seed).problem
        print(f"seed {seed}:")
        code = max(code, gradcheck_problem(problem, seed=seed))
    return code


def cmd_qcqp_selftest(args) -> int:
    if args.count == 0:
        print("warning: count = 0, nothing to check", file=sys.stderr)
        return EXIT_OK
    rng = np.random.default_rng(args.seed)
    start = time.perf_counter()
    worst, boundary = 0.0, 0
    for i in range(args.count):
        on_boundary = i % SELFTEST_BOUNDARY_EVERY == 0
        boundary += on_boundary
        ev, params = random_feasible_instance(rng, boundary=on_boundary)
        dz = solve_direction(ev, params).delta_z
        ref = qcqp_oracle(ev, params).delta_z
        worst = max(worst, float(np.max(np.abs(dz - ref))))
    elapsed = time.perf_counter() - start
    ok = worst <= SELFTEST_TOL
    print(f"{args.count} instances ({boundary} on the boundary) in {elapsed:.2f} s; "
          f"max deviation {worst:.3e} [{'ok' if ok else 'FAIL'}]")
    return EXIT_OK if ok else EXIT_CHECK


COMPARE_HEADER = ["k", "barrier_hypergrad_norm", "barrier_sqrt_h", "baseline_hypergrad_norm",
                  "baseline_sqrt_h", "baseline_violation"]


def _compare_one(cfg, seed):
    return ex.compare_rows(cfg, seed, with_barrier=cfg.compare_mode == "both")


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "compare")
    runs = _map(_compare_one, [(cfg, s) for s in cfg.seeds], args.jobs)
    summary, statuses = [], []
    for seed, (rows, barrier, base) in zip(cfg.seeds, runs):
        with open(out / f"compare_seed{seed}.csv", "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=COMPARE_HEADER)
            wr.writeheader()
            wr.writerows(rows)
        entry = {
            "seed": seed,
            "baseline_final_hypergrad_norm": base.hypergrad_norm[-1],
            "baseline_violation_rows": sum(1 for r in rows if r["baseline_violation"] == 1),
        }
        if barrier is not None:
            ex.write_trace(out / _trace_name(seed), barrier)
            h = [r.h_minus_eps2 + cfg.eps ** 2 for r in barrier.trace]
            entry.update(barrier_status=barrier.status.value,
                         barrier_final_hypergrad_norm=barrier.trace[-1].hypergrad_norm,
                         barrier_safety_chain_ok=check_safety_chain(h, cfg.eps, cfg.gamma))
            statuses.append(barrier.status)
        summary.append(entry)
        print(", ".join(f"{k}={v!r}" for k, v in entry.items()))
    ex.write_json(out / "summary.json", {"runs": summary})
    return _status_exit_code(statuses)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value experiment config")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel runs")
    common.add_argument("--seed-override", type=int, default=None, metavar="K",
                        help="run only seed K")

    parser = argparse.ArgumentParser(prog="barrier-blo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run the solver per seed").set_defaults(fn=cmd_solve)
    sub.add_parser("ablate", parents=[common], help="grid over w").set_defaults(fn=cmd_ablate)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference oracle checks").set_defaults(
        fn=cmd_gradcheck)
    st = sub.add_parser("qcqp-selftest", help="closed form vs dual bisection")
    st.add_argument("--count", type=int, default=1000)
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(fn=cmd_qcqp_selftest)
    sub.add_parser("compare", parents=[common], help="barrier method vs double-loop baseline").set_defaults(
        fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        _err("--jobs: must be >= 1")
        return EXIT_CONFIG
    if getattr(args, "count", 0) < 0:
        _err("--count: must be >= 0")
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except BarrierBloError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
