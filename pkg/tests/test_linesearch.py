import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barrier_blo import (BilevelProblem, LineSearchConfig, QcqpParams, SolverConfig, backtrack,
                         check_safety_chain, evaluate, lemma_step_bound, solve, solve_direction)
from barrier_blo.errors import MaxBacktracksExceeded, NonFiniteEvaluation
from barrier_blo.problems import make_quadratic_testbed, make_synthetic
from barrier_blo.problems.synthetic import QuadraticTestbed


class FlatLower(BilevelProblem):
    """f = 1/2 ||z||^2 with a lower level whose y-gradient vanishes, so h = 0 everywhere."""

    def dims(self):
        return 1, 1

    def eval_f(self, z):
        return 0.5 * float(z @ z)

    def grad_f(self, z):
        return np.array(z, dtype=float)

    def eval_g(self, z):
        return 0.0

    def grad_y_g(self, z):
        return np.zeros(1)

    def vjp_grad_y_g(self, z, v):
        return np.zeros(2)


def test_full_step_accepted_on_quadratic():
    prob = FlatLower()
    ev = evaluate(prob, np.array([1.0, 0.0]))
    res = backtrack(prob, ev, np.array([-1.0, 0.0]), LineSearchConfig(), eps=0.1)
    assert res.t == 1.0 and res.backtracks == 0
    assert res.f_new == 0.0
    assert res.armijo_rhs == pytest.approx(0.4)


def test_zero_direction_accepts_t_max():
    prob = make_quadratic_testbed(2, seed=0)
    z = prob.feasible_point([0.2, -0.1])
    ev = evaluate(prob, z)
    cfg = LineSearchConfig(t_max=0.7)
    res = backtrack(prob, ev, np.zeros(4), cfg, eps=0.1)
    assert res.t == 0.7 and res.backtracks == 0
    np.testing.assert_array_equal(res.z_new, z)


def test_lemma_bound_example():
    cfg = LineSearchConfig(alpha_ls=0.1, gamma=0.1, beta=0.5, t_max=1.0)
    assert lemma_step_bound(cfg, alpha_b=0.1, w=0.01, lip_f=1.0, lip_h=1.0) == pytest.approx(0.01)
    assert math.ceil(math.log(0.01) / math.log(0.5)) == 7


def unit_constant_testbed():
    # h = ||A z||^2 with A = [-s, s^2]; 2 ||A||^2 = 1 needs s^2 + s^4 = 1/2
    s = math.sqrt((math.sqrt(3.0) - 1.0) / 2.0)
    return QuadraticTestbed(np.array([[s]]), np.eye(2), np.zeros(1))


def test_backtracks_bounded_when_constants_are_one():
    prob = unit_constant_testbed()
    assert prob.lip_f == pytest.approx(1.0)
    assert prob.lip_h == pytest.approx(1.0)
    cfg = SolverConfig(max_iter=300)
    t_min = lemma_step_bound(cfg.ls, cfg.alpha_b, cfg.w, 1.0, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(10):
        z0 = prob.feasible_point(rng.standard_normal(1))
        rep = solve(prob, z0, cfg)
        assert rep.steps, "solver took no step"
        assert min(rep.steps) >= t_min
        assert max(r.backtracks for r in rep.trace) <= 7


def test_ascent_direction_exhausts_backtracks():
    prob = FlatLower()
    ev = evaluate(prob, np.array([1.0, 1.0]))
    with pytest.raises(MaxBacktracksExceeded) as info:
        backtrack(prob, ev, np.array([1.0, 1.0]), LineSearchConfig(max_backtracks=5), eps=0.1)
    assert info.value.t == pytest.approx(0.5 ** 5)
    assert info.value.armijo_residual > 0


def test_non_finite_direction_rejected():
    prob = FlatLower()
    ev = evaluate(prob, np.array([1.0, 1.0]))
    with pytest.raises(NonFiniteEvaluation):
        backtrack(prob, ev, np.array([np.nan, 0.0]), LineSearchConfig(), eps=0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        LineSearchConfig(beta=1.0)
    with pytest.raises(ValueError):
        LineSearchConfig(t_max=0.0)
    with pytest.raises(ValueError):
        LineSearchConfig(max_backtracks=0)


def test_safety_chain_examples():
    eps, gamma = 1.0, 0.1
    h0 = eps ** 2 - 0.5
    assert check_safety_chain([h0, eps ** 2 - 0.45], eps, gamma)
    assert not check_safety_chain([h0, eps ** 2 - 0.44], eps, gamma)
    assert check_safety_chain([eps ** 2] * 50, eps, gamma)
    assert check_safety_chain([], eps, gamma)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), w=st.sampled_from([1e-3, 1e-2, 1e-1]))
def test_accepted_step_satisfies_both_tests(seed, w):
    prob = make_synthetic(seed % 50, dim=5)
    rng = np.random.default_rng(seed)
    eps = 0.1
    # random point strictly inside the sublevel set
    z = prob.start_point(rng)
    z = z + 0.02 * rng.standard_normal(z.size)
    ev = evaluate(prob, z)
    if ev.h > eps ** 2:
        z = prob.start_point(rng)
        ev = evaluate(prob, z)
    dz = solve_direction(ev, QcqpParams(w=w, eps=eps)).delta_z
    cfg = LineSearchConfig()
    res = backtrack(prob, ev, dz, cfg, eps)
    assert res.t == cfg.t_max * cfg.beta ** res.backtracks
    assert res.armijo_lhs <= res.armijo_rhs + 1e-14 * max(1.0, abs(ev.f))
    assert res.safety_lhs <= res.safety_rhs + 1e-14 * max(1.0, abs(ev.h - eps ** 2))
    assert res.h_new <= eps ** 2
    # the stored values re-check from scratch
    assert prob.eval_f(res.z_new) == res.f_new
    assert res.f_new <= ev.f + cfg.alpha_ls * res.t * float(ev.grad_f @ dz) + 1e-14 * max(1.0, abs(ev.f))
