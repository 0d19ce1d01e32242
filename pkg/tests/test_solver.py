import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barrier_blo import (Iterate, ProblemEval, SolverConfig, Status, check_safety_chain, evaluate,
                         init_feasible, kkt_residual, solve)
from barrier_blo.errors import InitBudgetExhausted
from barrier_blo.problems import make_quadratic_testbed, make_synthetic


def test_toy_converges_to_origin(toy):
    rep = solve(toy, np.array([0.1, 0.1]), SolverConfig())
    assert rep.status is Status.STATIONARY
    assert np.linalg.norm(rep.final.data) <= 1e-3
    fs = [r.f for r in rep.trace]
    assert all(b < a for a, b in zip(fs, fs[1:]))
    assert rep.trace[-1].t == 0.0


def test_start_at_kkt_point_stops_immediately(toy):
    rep = solve(toy, np.zeros(2), SolverConfig())
    assert rep.status is Status.STATIONARY
    assert rep.iterations == 0 and len(rep.trace) == 1
    assert rep.trace[0].k == 0 and rep.trace[0].norm_dz == 0.0
    assert rep.final_kkt == 0.0


def test_infeasible_start_is_reported(toy):
    rep = solve(toy, np.array([0.0, 5.0]), SolverConfig())
    assert rep.status is Status.INFEASIBLE_START
    assert rep.trace == [] and rep.iterations == 0
    assert "exceeds" in rep.message


def test_init_feasible_examples(toy):
    z = Iterate(np.array([0.4, 0.4]), 1, 1)
    assert init_feasible(toy, z, eps=0.1) is z
    out = init_feasible(toy, np.array([0.0, 5.0]), eps=0.1, margin=0.1)
    assert evaluate(toy, out).h <= 0.009
    with pytest.raises(InitBudgetExhausted):
        init_feasible(toy, np.array([0.0, 5.0]), eps=0.1, margin=0.1, budget=0)


def _ev(gf, h, gh):
    d = len(gf)
    return ProblemEval(z=Iterate(np.zeros(d), d - 1, 1), f=0.0, grad_f=np.asarray(gf, float),
                       grad_y_g=np.array([math.sqrt(h)]), h=h, grad_h=np.asarray(gh, float))


def test_kkt_residual_examples():
    res = kkt_residual(_ev([0.3, 0.4], 0.0025, [0.1, 0.0]), 0.0, eps=0.1)
    assert res.value == pytest.approx(0.5, rel=1e-15)
    assert res.feasibility == 0.0 and res.complementarity == 0.0
    assert res.lower_residual == pytest.approx(0.05)
    # exact KKT point on the boundary: grad f = -lam grad h
    res = kkt_residual(_ev([0.0, -0.6], 0.01, [0.0, 2.0]), 0.3, eps=0.1)
    assert res.value <= 1e-15
    # a positive multiplier on an inactive constraint: charged min(lam, slack)
    res = kkt_residual(_ev([0.0, 0.0], 0.0025, [0.0, 0.0]), 0.2, eps=0.1)
    assert res.complementarity == pytest.approx(0.0075)
    res = kkt_residual(_ev([0.0, 0.0], 0.0025, [0.0, 0.0]), 1e-4, eps=0.1)
    assert res.value == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        kkt_residual(_ev([0.0, 0.0], 0.0, [0.0, 0.0]), -1.0, eps=0.1)


def test_mapped_tolerance():
    res = kkt_residual(_ev([0.3, 0.4], 0.0025, [0.1, 0.0]), 0.0, eps=0.1)
    assert res.mapped_tolerance == pytest.approx(max(0.5, math.sqrt(0.01 + 0.5)))


@pytest.mark.parametrize("tol", [1e-4, 1e-6])
def test_testbed_kkt_residual_shrinks_with_tolerance(tol):
    prob = make_quadratic_testbed(3, seed=1)
    z0 = prob.feasible_point(prob.z_star[:3] + np.array([0.5, -0.3, 0.2]))
    rep = solve(prob, z0, SolverConfig(tol_dz=tol, max_iter=10000))
    assert rep.status is Status.STATIONARY
    assert rep.final_kkt <= 10 * tol
    assert np.linalg.norm(rep.final.data - prob.z_star) <= 10 * tol


def test_testbed_kkt_bound():
    prob = make_quadratic_testbed(3, seed=4)
    z0 = prob.feasible_point(prob.z_star[:3] + 0.5)
    rep = solve(prob, z0, SolverConfig(tol_dz=1e-6, max_iter=10000))
    assert rep.status is Status.STATIONARY and rep.final_kkt <= 1e-4


def check_run_invariants(rep, cfg):
    eps2 = cfg.eps ** 2
    trace = rep.trace
    assert all(r.h_minus_eps2 <= 1e-12 for r in trace)
    assert check_safety_chain([r.h_minus_eps2 + eps2 for r in trace], cfg.eps, cfg.gamma)
    for a, b in zip(trace, trace[1:]):
        assert b.f <= a.f - cfg.alpha_ls * a.t * a.norm_dz ** 2 + 1e-12 * a.scale
    for r in trace:
        assert r.descent_gap <= 1e-10 * r.scale
    # the ergodic average is a plain running mean of the recorded squared step norms
    sq = [r.norm_dz ** 2 for r in trace if r.t > 0]
    np.testing.assert_allclose(rep.ergodic_avg, np.cumsum(sq) / np.arange(1, len(sq) + 1), rtol=1e-12)
    for K in range(1, len(rep.ergodic_avg) + 1):
        assert rep.ergodic_avg[K - 1] <= rep.ergodic_bound(K) + 1e-10


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), w=st.sampled_from([1e-3, 1e-2, 1e-1]))
def test_synthetic_run_invariants(seed, w):
    prob = make_synthetic(seed, dim=6)
    cfg = SolverConfig(w=w, max_iter=150)
    rep = solve(prob, prob.start_point(np.random.default_rng(seed)), cfg)
    assert rep.status in (Status.MAX_ITER, Status.STATIONARY)
    check_run_invariants(rep, cfg)


def test_runs_are_deterministic():
    prob = make_synthetic(2, dim=8)
    z0 = prob.start_point(np.random.default_rng(5))
    a = solve(prob, z0, SolverConfig(max_iter=200))
    b = solve(prob, z0, SolverConfig(max_iter=200))
    assert [row(r) for r in a.trace] == [row(r) for r in b.trace]
    np.testing.assert_array_equal(a.final.data, b.final.data)


def row(r):
    return (r.k, r.f, r.h_minus_eps2, r.norm_dz, r.t, r.lam, r.backtracks, r.kkt_residual)


def test_record_every_thins_trace():
    prob = make_synthetic(0, dim=4)
    z0 = prob.start_point(np.random.default_rng(0))
    rep = solve(prob, z0, SolverConfig(max_iter=50, record_every=10, tol_dz=0.0))
    assert [r.k for r in rep.trace] == [0, 10, 20, 30, 40]
    assert rep.iterations == 50


def test_metrics_hook_is_recorded(toy):
    rep = solve(toy, np.array([0.1, 0.1]), SolverConfig(), metrics=lambda ev: 42.0)
    assert all(r.hypergrad_norm == 42.0 for r in rep.trace)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eps=0.0)
    with pytest.raises(ValueError):
        SolverConfig(w=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(gamma=1.5)
    with pytest.raises(ValueError):
        SolverConfig(seed=-1)
