import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eotr.costs import CostModel
from eotr.exact_ot import DualPair, solve_exact
from eotr.measures import DensitySpec, grid_measure
from eotr.sinkhorn import (SinkhornConfig, derivative_check, dual_objective, entropic_cost_sweep,
                           schrodinger_residual, sinkhorn_divergence, softmin, solve_sinkhorn)
from oracles import entropic_2x2

# (eps, t = gamma_00, value) for the swap problem, from oracles.entropic_2x2
SWAP_ORACLE = [
    (0.1, 0.4999772978458133, 0.06931017816611852),
    (0.5, 0.44039853905531995, 0.2831095847584864),
    (1.0, 0.365529289300505, 0.3798854930417225),
]


def _solve(C, a, b, eps, **kw):
    kw.setdefault("tol", 1e-13)
    kw.setdefault("max_iter", 100000)
    return solve_sinkhorn(C, a, b, SinkhornConfig(eps, **kw))


@pytest.mark.parametrize("eps,t,value", SWAP_ORACLE)
def test_swap_problem_matches_scalar_oracle(two_by_two, eps, t, value):
    C, a, b = two_by_two
    res = _solve(C, a, b, eps)
    np.testing.assert_allclose(res.plan.matrix, [[t, 0.5 - t], [0.5 - t, t]], atol=1e-6)
    assert res.v_eps == pytest.approx(value, abs=1e-6)


def test_large_temperature_gives_product_plan(rng):
    C = rng.random((4, 3))
    a, b = np.array([0.1, 0.2, 0.3, 0.4]), np.array([0.5, 0.25, 0.25])
    res = _solve(C, a, b, 1e3)
    np.testing.assert_allclose(res.plan.matrix, np.outer(a, b), atol=1e-4)
    assert res.entropy <= 1e-6
    assert res.v_eps == pytest.approx(a @ C @ b, abs=1e-3)


def test_symmetric_problem_has_matching_potentials():
    mu = grid_measure(DensitySpec.box([0.0], [1.0]), 20)
    C = np.subtract.outer(mu.points[:, 0], mu.points[:, 0]) ** 2
    res = _solve(C, mu, mu, 0.05)
    diff = res.duals.phi - res.duals.psi
    assert np.ptp(diff) <= 1e-9


def test_tiny_temperature_stays_finite(rng):
    C = rng.random((30, 30))
    w = np.full(30, 1 / 30)
    res = solve_sinkhorn(C, w, w, SinkhornConfig(1e-4, tol=1e-9, max_iter=200000,
                                                  eps_scaling=0.5))
    assert res.converged
    assert np.all(np.isfinite(res.plan.matrix))
    assert np.isfinite(res.v_eps)


def test_iteration_cap_flags_non_convergence(rng):
    C = rng.random((20, 20))
    w = np.full(20, 0.05)
    res = _solve(C, w, w, 1e-3, max_iter=2)
    assert not res.converged
    assert res.residual > 1e-13


def test_reruns_are_bit_identical(rng):
    C = rng.random((15, 11))
    a, b = np.full(15, 1 / 15), np.full(11, 1 / 11)
    cfg = SinkhornConfig(0.03, tol=1e-11, eps_scaling=0.5)
    r1, r2 = solve_sinkhorn(C, a, b, cfg), solve_sinkhorn(C, a, b, cfg)
    assert np.array_equal(r1.plan.matrix, r2.plan.matrix)
    assert r1.v_eps == r2.v_eps


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=1.0, tol=0.0),
                                dict(epsilon=1.0, max_iter=0),
                                dict(epsilon=1.0, eps_scaling=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SinkhornConfig(**kw)


def test_input_validation(two_by_two):
    C, a, b = two_by_two
    with pytest.raises(ValueError):
        _solve(C, [1.0, 0.0], b, 0.1)
    with pytest.raises(ValueError):
        _solve(np.array([[0, np.nan], [1, 0]]), a, b, 0.1)
    with pytest.raises(ValueError):
        _solve(C, a, b, 0.1, warm_start=DualPair([0.0], [0.0]))


def test_softmin_is_stable_for_large_arguments():
    M = np.array([[1e4, 1e4 + 1.0]])
    val = softmin(M, 1e-2, np.log([0.5, 0.5]), axis=1)
    assert val[0] == pytest.approx(1e4 + 1e-2 * math.log(2), rel=1e-12)


def test_sweep_monotone_along_decreasing_ladder(two_by_two):
    C, a, b = two_by_two
    out = entropic_cost_sweep(C, a, b, [1.0, 0.5, 0.25], SinkhornConfig(1.0, tol=1e-13))
    v = [r.v_eps for r in out]
    assert v[0] >= v[1] >= v[2] >= 0.0


def test_sweep_singleton_equals_direct_solve(two_by_two):
    C, a, b = two_by_two
    cfg = SinkhornConfig(0.3, tol=1e-13)
    (one,) = entropic_cost_sweep(C, a, b, [0.3], cfg)
    assert one.v_eps == solve_sinkhorn(C, a, b, cfg).v_eps


def test_sweep_concave_on_five_points(rng):
    C = rng.random((8, 8))
    w = np.full(8, 1 / 8)
    ladder = np.geomspace(1.0, 0.05, 5)
    out = entropic_cost_sweep(C, w, w, ladder, SinkhornConfig(1.0, tol=1e-13, max_iter=100000))
    e = ladder[::-1]
    v = np.array([r.v_eps for r in out])[::-1]
    slopes = np.diff(v) / np.diff(e)
    assert np.all(np.diff(v) >= -1e-12)
    assert np.all(2 * np.diff(slopes) / (e[2:] - e[:-2]) <= 1e-8)


def test_sweep_rejects_unsorted_ladder(two_by_two):
    with pytest.raises(ValueError):
        entropic_cost_sweep(*two_by_two, [0.1, 0.5], SinkhornConfig(0.1))


def test_derivative_check_against_scalar_oracle(two_by_two):
    C, a, b = two_by_two
    eps, h = 0.5, 1e-3
    chk = derivative_check(C, a, b, eps, h)
    assert chk.gap <= 1e-4
    fd_oracle = (entropic_2x2(C, a, b, eps + h)[1] - entropic_2x2(C, a, b, eps - h)[1]) / (2 * h)
    assert chk.fd == pytest.approx(fd_oracle, abs=1e-6)


def test_derivative_check_zero_cost():
    w = np.array([0.3, 0.7])
    chk = derivative_check(np.zeros((2, 2)), w, w, 0.5, 1e-3)
    assert chk.fd == 0.0 and chk.ent == pytest.approx(0.0, abs=1e-15)
    assert chk.gap <= 1e-15


def test_derivative_check_second_order_in_h(two_by_two):
    g1 = derivative_check(*two_by_two, 0.5, 0.05).gap
    g2 = derivative_check(*two_by_two, 0.5, 0.025).gap
    assert 3.5 <= g1 / g2 <= 4.5


def test_derivative_check_requires_positive_lower_point(two_by_two):
    with pytest.raises(ValueError):
        derivative_check(*two_by_two, 0.1, 0.2)


def test_divergence_of_a_measure_with_itself_is_zero():
    mu = grid_measure(DensitySpec.box([0.0], [1.0], kind="affine-ramp", intercept=1.0,
                                      slope=[1.0]), 30)
    for eps in (0.01, 0.3):
        assert sinkhorn_divergence(CostModel("quadratic"), mu, mu, eps) == 0.0
    twin = grid_measure(DensitySpec.box([0.0], [1.0], kind="affine-ramp", intercept=1.0,
                                        slope=[1.0]), 30)
    assert sinkhorn_divergence(CostModel("abs"), mu, twin, 0.1) == 0.0


def test_divergence_parts():
    mu = grid_measure(DensitySpec.box([0.0], [1.0]), 20)
    nu = grid_measure(DensitySpec.box([0.25], [1.25]), 20)
    val, (cross, left, right) = sinkhorn_divergence(CostModel("quadratic"), mu, nu, 0.05,
                                                    SinkhornConfig(0.05, tol=1e-12),
                                                    return_parts=True)
    assert val == pytest.approx(cross.v_eps - 0.5 * (left.v_eps + right.v_eps), abs=1e-15)
    assert val > 0


def test_residual_small_after_convergence(two_by_two):
    res = _solve(*two_by_two, 0.5, tol=1e-9)
    assert schrodinger_residual(res, *two_by_two) <= 1e-7


def test_residual_detects_perturbation(two_by_two):
    res = _solve(*two_by_two, 0.5)
    delta = 1e-3
    phi = res.duals.phi.copy()
    phi[0] += delta
    bad = dataclasses.replace(res, duals=DualPair(phi, res.duals.psi))
    assert schrodinger_residual(bad, *two_by_two) >= delta / 2


def test_residual_of_product_plan_duals_at_large_temperature(rng):
    C = rng.random((3, 3))
    a = b = np.full(3, 1 / 3)
    mean = a @ C @ b
    phi = C @ b - mean
    psi = a @ C
    fake = dataclasses.replace(_solve(C, a, b, 1e3), duals=DualPair(phi, psi))
    assert schrodinger_residual(fake, C, a, b) <= 1e-3


@st.composite
def problems(draw):
    n, m = draw(st.integers(2, 7)), draw(st.integers(2, 7))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    a, b = rng.random(n) + 0.05, rng.random(m) + 0.05
    return rng.random((n, m)), a / a.sum(), b / b.sum()


@settings(max_examples=60, deadline=None)
@given(problems(), st.sampled_from([0.02, 0.1, 0.5, 2.0]))
def test_result_invariants(prob, eps):
    C, a, b = prob
    res = _solve(C, a, b, eps, tol=1e-12)
    assert res.converged
    P = res.plan.matrix
    phi, psi = res.duals.phi, res.duals.psi
    expected = np.exp((phi[:, None] + psi[None, :] - C) / eps) * np.outer(a, b)
    np.testing.assert_allclose(P, expected, rtol=1e-9, atol=0)
    assert abs(phi @ a) <= 1e-9
    assert res.v_eps == pytest.approx(phi @ a + psi @ b, rel=1e-9, abs=1e-12)
    assert res.entropy >= 0
    assert np.max(np.abs(P.sum(axis=0) - b)) <= 1e-12
    assert np.max(np.abs(P.sum(axis=1) - a)) <= 1e-12
    primal = float(np.sum(C * P)) + eps * res.entropy
    assert primal == pytest.approx(res.v_eps, rel=1e-8, abs=1e-12)
    sol = solve_exact(C, a, b)
    assert res.v_eps >= sol.v0 - 1e-12
    assert res.v_eps >= dual_objective(C, a, b, sol.duals, eps) - 1e-9
    rng = np.random.default_rng(0)
    other = DualPair(rng.normal(size=a.size), rng.normal(size=b.size))
    assert res.v_eps >= dual_objective(C, a, b, other, eps) - 1e-9


@settings(max_examples=30, deadline=None)
@given(problems())
def test_value_is_non_decreasing_and_concave(prob):
    C, a, b = prob
    ladder = np.geomspace(2.0, 0.02, 7)
    out = entropic_cost_sweep(C, a, b, ladder, SinkhornConfig(2.0, tol=1e-13, max_iter=200000))
    e = ladder[::-1]
    v = np.array([r.v_eps for r in out])[::-1]
    assert np.all(np.diff(v) >= -1e-12)
    slopes = np.diff(v) / np.diff(e)
    assert np.all(2 * np.diff(slopes) / (e[2:] - e[:-2]) <= 1e-8)
