"""Reference computations that do not go through the package.

Each function here uses scipy or a closed form so that tests compare two
independent routes. Frozen numbers in the test files were produced by
these functions and are re-derived by ``test_oracles_reproduce_frozen_values``.
"""

import numpy as np
from scipy import integrate
from scipy.optimize import linprog, minimize_scalar
from scipy.special import erf, xlogy


def entropic_2x2(C, a, b, eps):
    """Entropic plan and value of a 2 x 2 problem by bounded scalar minimization.

    The coupling is parametrized by its (0, 0) entry t; the objective is
    transport cost plus eps times the relative entropy to a (x) b.
    """
    C = np.asarray(C, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def plan(t):
        return np.array([[t, a[0] - t], [b[0] - t, 1 - a[0] - b[0] + t]])

    def objective(t):
        P = plan(t)
        return float(np.sum(C * P) + eps * np.sum(xlogy(P, P / np.outer(a, b))))

    lo, hi = max(0.0, a[0] + b[0] - 1), min(a[0], b[0])
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-14, "maxiter": 10000})
    return plan(res.x), float(res.fun)


def lp_transport(C, a, b):
    """Transport cost by the HiGHS linear programming solver."""
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    rows = np.kron(np.eye(n), np.ones(m))
    cols = np.kron(np.ones(n), np.eye(m))
    res = linprog(C.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return float(res.fun), res.x.reshape(n, m)


def abs_laplace_closed_form(eps):
    """Integral of exp(-|x - y| / eps) over the unit square."""
    eps = np.asarray(eps, dtype=float)
    return 2 * eps * (1 - eps * (1 - np.exp(-1 / eps)))


def abs_entropic_closed_form(eps):
    """Entropic cost of the distance cost between two uniform laws on [0, 1]."""
    return -np.asarray(eps) * np.log(abs_laplace_closed_form(eps))


def quadratic_laplace_continuum(eps, dim=1):
    """Integral of exp(-|x - y|^2 / (2 eps)) over the unit cube squared.

    The integrand factorizes over coordinates; the one-dimensional factor is
    integrated numerically over the difference variable s = x - y, whose
    density on [-1, 1] is 1 - |s|.
    """
    val, _ = integrate.quad(lambda s: (1 - abs(s)) * np.exp(-s * s / (2 * eps)), -1, 1,
                            points=[0.0], epsabs=1e-14, epsrel=1e-12)
    return val ** dim


def quadratic_laplace_erf(eps):
    """Closed form of :func:`quadratic_laplace_continuum` in one dimension."""
    s = np.sqrt(2 * eps)
    return np.sqrt(np.pi) * s * erf(1 / s) - 2 * eps * (1 - np.exp(-1 / (2 * eps)))


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
