import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eotr.costs import CostModel, cost_matrix
from eotr.exact_ot import Coupling, DualPair, solve_exact
from eotr.gap import (brenier_map_1d, gap_field, gap_inequality_check, kappa, laplace_floor,
                      laplace_integral, laplace_log_integral, laplace_slope_fit,
                      map_lipschitz_estimate, minty_frame, resolvent, resolvent_detachment_check,
                      stability_metrics)
from eotr.measures import DensitySpec, grid_measure
from eotr.sinkhorn import SinkhornConfig, solve_sinkhorn
from oracles import (abs_laplace_closed_form, loglog_slope, quadratic_laplace_continuum,
                     quadratic_laplace_erf)

X2Y2 = CostModel.polynomial([[0, 0, 0], [0, 0, 0], [0, 0, 1]])
# closed form 2 eps (1 - eps (1 - exp(-1/eps))) at eps = 0.1
ABS_LAPLACE_AT_TENTH = 0.18000090799859525


def _grid(n, lo=0.0, hi=1.0, d=1):
    return grid_measure(DensitySpec.box([lo] * d, [hi] * d), n)


def _setup(c, mu, nu):
    C = cost_matrix(c, mu, nu)
    sol = solve_exact(C, mu, nu)
    return C, sol, gap_field(C, sol.duals)


def _kappa_oracle(r, n=81):
    """Dense-pair sup of |xy / (x'y') - 1| over [0.5, 1]^2 at max-norm distance <= r."""
    g = np.linspace(0.5, 1, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    p = np.stack([X.ravel(), Y.ravel()], axis=1)
    best = 0.0
    for q in p:
        near = p[np.abs(p - q).max(axis=1) <= r + 1e-12]
        ratio = q[0] * q[1] / (near[:, 0] * near[:, 1])
        best = max(best, np.abs(ratio - 1).max(), np.abs(1 / ratio - 1).max())
    return best


def test_swap_problem_gap(two_by_two):
    C, a, b = two_by_two
    sol = solve_exact(C, a, b)
    g = gap_field(C, sol.duals)
    np.testing.assert_allclose(g.E, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    np.testing.assert_array_equal(g.zero_set_mask, np.eye(2, dtype=bool))


def test_gap_vanishes_on_optimal_support(rng):
    mu = grid_measure(DensitySpec.box([0.0], [1.0], kind="affine-ramp", intercept=1.0,
                                      slope=[2.0]), 40)
    C, sol, g = _setup(CostModel("quadratic"), mu, _grid(30))
    assert np.all(g.zero_set_mask[sol.coupling.matrix > 1e-12])


def test_gap_invariant_under_dual_shift(two_by_two, rng):
    C = rng.random((5, 4))
    a, b = np.full(5, 0.2), np.full(4, 0.25)
    sol = solve_exact(C, a, b)
    g1 = gap_field(C, sol.duals)
    g2 = gap_field(C, sol.duals.shifted(3.7))
    np.testing.assert_allclose(g1.E, g2.E, atol=1e-14)


def test_gap_rejects_infeasible_duals(two_by_two):
    C, a, b = two_by_two
    with pytest.raises(ValueError):
        gap_field(C, DualPair([0.1, 0.0], [0.0, 0.0]))


def test_kappa_constant_cross_hessian_is_zero():
    box = ([0.0, 0.0], [1.0, 1.0])
    assert kappa(CostModel("quadratic", dim=2), box, box, 0.3) == 0.0
    assert kappa(CostModel("bilinear", dim=2), box, box, 0.3) == 0.0


@pytest.mark.parametrize("r", [0.05, 0.1])
def test_kappa_x2y2_against_dense_pairs(r):
    box = ([0.5], [1.0])
    k = kappa(X2Y2, box, box, r)
    ref = _kappa_oracle(r)
    assert ref <= k <= 1.05 * ref + 1e-9


def test_kappa_shrinks_with_radius():
    box = ([0.5], [1.0])
    ks = [kappa(X2Y2, box, box, r) for r in (0.2, 0.1, 0.05, 0.01, 0.001)]
    assert all(x > y for x, y in zip(ks, ks[1:]))
    assert ks[-1] < 0.01


def test_minty_frame_needs_twist():
    with pytest.raises(ValueError):
        minty_frame(X2Y2, [0.0], [0.5])


def test_gap_inequality_quadratic():
    mu = _grid(256)
    nu = grid_measure(DensitySpec.box([0.0], [1.0], kind="affine-ramp", intercept=1.0,
                                      slope=[1.0]), 256)
    c = CostModel("quadratic")
    _, _, g = _setup(c, mu, nu)
    rep = gap_inequality_check(g, c, mu, nu, r=0.2, trials=10000, rng_seed=3)
    assert rep.kappa == 0.0
    assert rep.trials >= 10000
    assert rep.violations == 0
    assert rep.graph_pairs > 0 and rep.graph_violations == 0
    assert rep.passed


def test_gap_inequality_diagonal_pair_is_twice_the_gap():
    mu = _grid(64)
    c = CostModel("quadratic")
    _, _, g = _setup(c, mu, mu)
    frame = minty_frame(c, mu.points[10], mu.points[10])
    x, y = mu.points[[3]], mu.points[[40]]
    du = frame.u(x, y) - frame.u(x, y)
    dv = frame.v(x, y) - frame.v(x, y)
    margin = 2 * g.E[3, 40] - (np.sum(du * du) - np.sum(dv * dv))
    assert margin == 2 * g.E[3, 40] >= 0


def test_laplace_large_temperature_tends_to_one(rng):
    C, a, b = rng.random((4, 4)), np.full(4, 0.25), np.full(4, 0.25)
    g = gap_field(C, solve_exact(C, a, b).duals)
    assert laplace_integral(g, a, b, 1e8) == pytest.approx(1.0, abs=1e-7)


def test_laplace_abs_closed_form():
    assert float(abs_laplace_closed_form(0.1)) == pytest.approx(ABS_LAPLACE_AT_TENTH, rel=1e-15)
    mu = _grid(512)
    _, _, g = _setup(CostModel("abs"), mu, mu)
    assert laplace_integral(g, mu, mu, 0.1) == pytest.approx(ABS_LAPLACE_AT_TENTH, rel=0.01)


def test_laplace_bounded_by_gap_minimum():
    E = np.array([[0.3, 0.5], [0.7, 0.4]])
    g = gap_field(E, DualPair([0.0, 0.0], [0.0, 0.0]))
    w = np.array([0.5, 0.5])
    for eps in (0.01, 0.1, 1.0):
        assert laplace_integral(g, w, w, eps) <= math.exp(-0.3 / eps)


def test_laplace_continuum_oracles_agree():
    for eps in (1e-4, 1e-2, 0.3):
        assert quadratic_laplace_continuum(eps) == pytest.approx(quadratic_laplace_erf(eps),
                                                                 rel=1e-10)


def test_laplace_slope_quadratic_line():
    mu = _grid(512)
    c = CostModel("quadratic")
    _, _, g = _setup(c, mu, mu)
    fit = laplace_slope_fit(g, mu, mu, np.geomspace(1e-5, 1e-2, 10), floor=laplace_floor(c, mu))
    assert fit.slope == pytest.approx(0.5, abs=0.1)
    cont = [quadratic_laplace_continuum(e) for e in fit.epsilons]
    assert fit.slope == pytest.approx(loglog_slope(fit.epsilons, cont), abs=0.01)


def test_laplace_slope_quadratic_square():
    mu = _grid(32, d=2)
    c = CostModel("quadratic", dim=2)
    _, _, g = _setup(c, mu, mu)
    fit = laplace_slope_fit(g, mu, mu, np.geomspace(1e-3, 1e-2, 8), floor=laplace_floor(c, mu))
    assert fit.slope == pytest.approx(1.0, abs=0.15)
    cont = [quadratic_laplace_continuum(e, dim=2) for e in fit.epsilons]
    assert fit.slope == pytest.approx(loglog_slope(fit.epsilons, cont), abs=0.01)


def test_laplace_slope_abs_line():
    mu = _grid(512)
    c = CostModel("abs")
    _, _, g = _setup(c, mu, mu)
    floor = laplace_floor(c, mu)
    fit = laplace_slope_fit(g, mu, mu, np.geomspace(floor, 0.05, 10), floor=floor)
    assert fit.slope == pytest.approx(1.0, abs=0.1)


def test_laplace_slope_needs_two_rungs():
    mu = _grid(16)
    _, _, g = _setup(CostModel("quadratic"), mu, mu)
    with pytest.raises(ValueError):
        laplace_slope_fit(g, mu, mu, [1e-3, 0.9], floor=1e-2)


def test_brenier_identity_translation_dilation():
    mu = _grid(100)
    np.testing.assert_allclose(brenier_map_1d(mu, mu).values, mu.points[:, 0], atol=1e-15)
    shifted = _grid(100, 0.25, 1.25)
    np.testing.assert_allclose(brenier_map_1d(mu, shifted).values, mu.points[:, 0] + 0.25,
                               atol=1e-12)
    wide = _grid(100, 0.0, 2.0)
    T = brenier_map_1d(mu, wide)
    np.testing.assert_allclose(T.values, 2 * mu.points[:, 0], atol=1e-12)
    assert map_lipschitz_estimate(T) == pytest.approx(2.0)


def test_stability_product_plan_closed_form():
    # for independent X, Y uniform on the midpoint grid, E|Y - X|^2 = 1/6 - h^2/6
    n = 200
    mu = _grid(n)
    T = brenier_map_1d(mu, mu)
    plan = Coupling(np.outer(mu.weights, mu.weights), mu.weights, mu.weights)
    m = stability_metrics(plan, T, mu)
    assert m.map_mse == pytest.approx(1 / 6, abs=1 / (6 * n * n) + 1e-12)
    assert m.jensen_holds


def test_stability_vanishes_as_temperature_drops():
    mu = _grid(128)
    nu = _grid(128, 0.25, 1.25)
    C = cost_matrix(CostModel("quadratic"), mu, nu)
    T = brenier_map_1d(mu, nu)
    prev = math.inf
    for eps in (1e-1, 1e-2, 1e-3):
        res = solve_sinkhorn(C, mu, nu, SinkhornConfig(eps, tol=1e-11, max_iter=100000,
                                                        eps_scaling=0.5))
        m = stability_metrics(res.plan, T, mu)
        assert m.bary_mse <= m.map_mse + 1e-12
        assert m.map_mse < prev
        prev = m.map_mse
    assert prev < 1e-3


def test_stability_rejects_mismatched_plan():
    mu = _grid(8)
    with pytest.raises(ValueError):
        stability_metrics(Coupling(np.full((4, 4), 1 / 16), np.full(4, 0.25), np.full(4, 0.25)),
                          brenier_map_1d(mu, mu))


def test_resolvent_closed_forms():
    a = 0.25
    for z in (-0.3, 0.4, 1.7):
        assert resolvent(lambda w: 0.5 * w * w, z, (-3, 3)) == pytest.approx(z / 2, abs=1e-7)
        assert resolvent(lambda w: 0.5 * w * w + a * w, z, (-3, 3)) == pytest.approx(
            (z - a) / 2, abs=1e-7)


@pytest.mark.parametrize("shift", [0.0, 0.25])
def test_resolvent_detachment(shift):
    mu = _grid(256)
    nu = _grid(256, shift, 1 + shift)
    _, sol, g = _setup(CostModel("quadratic"), mu, nu)
    rep = resolvent_detachment_check(g, mu, nu, samples=1000, rng_seed=1)
    assert rep.passed
    assert rep.worst_margin >= -1e-6


def test_resolvent_identity_instance_has_factor_two_slack():
    # phi = psi = 0: E = (x - y)^2 / 2 and the bound is (x - y)^2 / 4
    mu = _grid(64)
    _, _, g = _setup(CostModel("quadratic"), mu, mu)
    x = mu.points[:, 0]
    y = x
    f = lambda w: np.max(np.atleast_1d(w)[:, None] * y[None, :] - 0.5 * y * y, axis=1)
    for i, j in ((2, 50), (10, 11), (60, 5)):
        z = x[i] + y[j]
        p = resolvent(f, z, (z - 1, z))
        assert (x[i] - p) ** 2 <= g.E[i, j] + 1e-9
        assert (x[i] - p) ** 2 == pytest.approx(0.25 * (x[i] - y[j]) ** 2, abs=2e-3)


@st.composite
def problems(draw):
    n, m = draw(st.integers(2, 7)), draw(st.integers(2, 7))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    a, b = rng.random(n) + 0.05, rng.random(m) + 0.05
    return rng.random((n, m)), a / a.sum(), b / b.sum()


@settings(max_examples=50, deadline=None)
@given(problems())
def test_gap_field_invariants(prob):
    C, a, b = prob
    sol = solve_exact(C, a, b)
    g = gap_field(C, sol.duals)
    assert np.all(g.E >= 0)
    assert np.all(g.zero_set_mask[sol.coupling.matrix > 1e-12])
    vals = [laplace_integral(g, a, b, e) for e in (0.01, 0.05, 0.2, 1.0, 5.0)]
    assert all(0 < v <= 1 for v in vals)
    assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))


@settings(max_examples=40, deadline=None)
@given(problems(), st.sampled_from([0.02, 0.1, 0.5]))
def test_dual_lower_bound_chain(prob, eps):
    C, a, b = prob
    sol = solve_exact(C, a, b)
    g = gap_field(C, sol.duals)
    v = solve_sinkhorn(C, a, b, SinkhornConfig(eps, tol=1e-12, max_iter=100000)).v_eps
    assert v >= sol.v0 - eps * laplace_log_integral(g, a, b, eps) - 1e-6


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 0.3), st.floats(0.01, 0.3))
def test_kappa_monotone_in_radius(r1, r2):
    box = ([0.5], [1.0])
    lo, hi = sorted((r1, r2))
    assert kappa(X2Y2, box, box, lo) <= kappa(X2Y2, box, box, hi) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.01, 0.1, 1.0]))
def test_jensen_on_random_plans(seed, eps):
    rng = np.random.default_rng(seed)
    mu = grid_measure(DensitySpec.box([0.0], [1.0], kind="truncated-bump",
                                      center=[rng.random()], width=0.3), 20)
    nu = grid_measure(DensitySpec.box([rng.random()], [2.0]), 25)
    C = cost_matrix(CostModel("quadratic"), mu, nu)
    res = solve_sinkhorn(C, mu, nu, SinkhornConfig(eps, tol=1e-11, max_iter=100000,
                                                    eps_scaling=0.5))
    m = stability_metrics(res.plan, brenier_map_1d(mu, nu), mu)
    assert m.jensen_holds
