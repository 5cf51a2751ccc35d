import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eotr.costs import (CostModel, _finite_difference_cross_hessian, _finite_difference_grad,
                        check_twist, cost_constants, cost_matrix, cross_hessian,
                        lipschitz_estimate, semiconcavity_estimate)
from eotr.measures import DiscreteMeasure

X2Y2 = CostModel.polynomial([[0, 0, 0], [0, 0, 0], [0, 0, 1]])


def _line(*pts):
    return DiscreteMeasure(list(pts), np.full(len(pts), 1.0 / len(pts)))


def test_quadratic_matrix_on_two_points():
    mu = _line(0.0, 1.0)
    np.testing.assert_array_equal(cost_matrix(CostModel("quadratic"), mu, mu),
                                  [[0.0, 0.5], [0.5, 0.0]])


def test_abs_matrix_on_two_points():
    mu = _line(0.0, 1.0)
    np.testing.assert_array_equal(cost_matrix(CostModel("abs"), mu, mu), [[0.0, 1.0], [1.0, 0.0]])


def test_bilinear_single_pair():
    assert cost_matrix(CostModel("bilinear"), _line(1.0), _line(2.0)).tolist() == [[-2.0]]


def test_cost_matrix_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        cost_matrix(CostModel("quadratic", dim=2), _line(0.0, 1.0), _line(0.0, 1.0))


@pytest.mark.parametrize("kind", ["quadratic", "abs", "p-norm-power", "bilinear"])
def test_fast_paths_match_pointwise_values(kind, rng):
    c = CostModel(kind, dim=2, p=3.0)
    x, y = rng.normal(size=(7, 2)), rng.normal(size=(5, 2))
    ref = c.value(x[:, None, :], y[None, :, :])
    np.testing.assert_allclose(cost_matrix(c, x, y), ref, rtol=1e-12, atol=1e-12)


def test_quadratic_cross_hessian_is_minus_identity():
    np.testing.assert_array_equal(cross_hessian(CostModel("quadratic", dim=2), [0.3, -1], [2, 5]),
                                  -np.eye(2))


def test_bilinear_cross_hessian_is_minus_identity():
    np.testing.assert_array_equal(cross_hessian(CostModel("bilinear", dim=3), [1, 2, 3], [0, 0, 1]),
                                  -np.eye(3))


def test_x2y2_cross_hessian_at_one():
    assert cross_hessian(X2Y2, [1.0], [1.0]).tolist() == [[4.0]]


def test_abs_has_no_cross_hessian():
    with pytest.raises(ValueError):
        cross_hessian(CostModel("abs"), [0.0], [1.0])


def test_twist_quadratic():
    rep = check_twist(CostModel("quadratic", dim=2), ([0, 0], [1, 1]), ([0, 0], [1, 1]))
    assert rep.twist_margin == 1.0


def test_twist_x2y2_degenerates_through_zero():
    rep = check_twist(X2Y2, ([-1], [1]), ([-1], [1]))
    assert rep.twist_margin == 0.0
    x, y = rep.argmin
    assert x[0] == 0.0 or y[0] == 0.0


def test_twist_x2y2_on_positive_box():
    rep = check_twist(X2Y2, ([0.5], [1]), ([0.5], [1]))
    assert rep.twist_margin == pytest.approx(1.0)
    assert rep.argmin == ((0.5,), (0.5,))


def test_lipschitz_partial_norm_examples():
    # one-variable constants: |d_x c| for the three standard kinds
    unit = ([0.0], [1.0])
    assert lipschitz_estimate(CostModel("abs"), unit, unit, norm="partial") == 1.0
    assert lipschitz_estimate(CostModel("quadratic"), unit, unit, norm="partial") == 1.0
    assert lipschitz_estimate(CostModel("bilinear"), unit, unit, norm="partial") == 1.0


def test_lipschitz_max_norm_counts_both_variables():
    unit = ([0.0], [1.0])
    assert lipschitz_estimate(CostModel("abs"), unit, unit) == 2.0
    assert lipschitz_estimate(CostModel("quadratic"), unit, unit) == 2.0
    assert lipschitz_estimate(CostModel("bilinear"), unit, unit) == 2.0


def test_lipschitz_sampled_kind_is_an_upper_bound(rng):
    unit = ([0.0], [1.0])
    lip = lipschitz_estimate(X2Y2, unit, unit)
    x, y = rng.random(2000), rng.random(2000)
    gx, gy = 2 * x * y * y, 2 * x * x * y
    assert lip >= np.max(np.abs(gx) + np.abs(gy))


def test_semiconcavity_matches_eigen_oracle():
    # operator norms of the full Hessians, from numpy eigen solves:
    # quadratic d=1 -> 2, bilinear d=1 -> 1, quadratic d=2 -> 2
    box = ([0.0], [1.0])
    assert semiconcavity_estimate(CostModel("quadratic"), box, box) == 2.0
    assert semiconcavity_estimate(CostModel("bilinear"), box, box) == 1.0
    box2 = ([0.0, 0.0], [1.0, 1.0])
    assert semiconcavity_estimate(CostModel("quadratic", dim=2), box2, box2) == 2.0
    for kind, dim in (("quadratic", 1), ("bilinear", 1), ("quadratic", 2)):
        c = CostModel(kind, dim=dim)
        H = c.hessian(np.full((1, dim), 0.3), np.full((1, dim), 0.7))[0]
        assert np.max(np.abs(np.linalg.eigvalsh(H))) == pytest.approx(
            semiconcavity_estimate(c, box2 if dim == 2 else box, box2 if dim == 2 else box))


def test_semiconcavity_rejects_abs():
    with pytest.raises(ValueError):
        semiconcavity_estimate(CostModel("abs"), ([0], [1]), ([0], [1]))


def test_cost_constants_abs_has_no_twist():
    k = cost_constants(CostModel("abs"), ([0], [1]), ([0], [1]))
    assert k.twist_margin == 0.0 and k.lipschitz == 2.0


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        CostModel("cosine")
    with pytest.raises(ValueError):
        CostModel("p-norm-power", p=0.5)


points = arrays(float, (6, 2), elements=st.floats(-3, 3))


@settings(max_examples=40, deadline=None)
@given(points, st.sampled_from(["quadratic", "abs", "bilinear"]))
def test_matrix_is_symmetric_on_identical_points(x, kind):
    C = cost_matrix(CostModel(kind, dim=2), x, x)
    np.testing.assert_allclose(C, C.T, atol=1e-12)


C2_MODELS = [
    CostModel("quadratic", dim=2),
    CostModel("bilinear", dim=2),
    CostModel("p-norm-power", dim=2, p=3.0),
    CostModel("p-norm-power", dim=1, p=4.0),
    CostModel.polynomial([[0, 1, 0], [0.5, 0, 2], [1, 0, 1]], dim=2),
]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(C2_MODELS), st.data())
def test_cross_hessian_matches_finite_differences(c, data):
    pt = arrays(float, (c.dim,), elements=st.floats(-1, 1))
    x, y = data.draw(pt), data.draw(pt)
    if c.kind == "p-norm-power" and np.linalg.norm(x - y) < 1e-2:
        y = y + 0.1
    fd = _finite_difference_cross_hessian(c, x, y)
    np.testing.assert_allclose(cross_hessian(c, x, y), fd, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(arrays(float, (4, 2), elements=st.floats(-1, 1)),
       arrays(float, (4, 2), elements=st.floats(-1, 1)))
def test_quadratic_cross_hessian_exact_everywhere(x, y):
    H = CostModel("quadratic", dim=2).cross_hessian(x, y)
    assert np.all(H == -np.eye(2))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(C2_MODELS), st.data())
def test_gradient_matches_finite_differences(c, data):
    pt = arrays(float, (c.dim,), elements=st.floats(-1, 1))
    x, y = data.draw(pt), data.draw(pt)
    gx, gy = c.grad(x, y)
    fx, fy = _finite_difference_grad(c, x, y)
    np.testing.assert_allclose(gx, fx, atol=1e-6)
    np.testing.assert_allclose(gy, fy, atol=1e-6)
