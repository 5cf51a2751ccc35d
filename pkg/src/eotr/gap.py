"""Duality gap E = c - phi (+) psi and the estimates built on it.

Contents: the gap field of a pair of Kantorovich potentials, the rotated
(Minty) coordinates u = (x + A y) / 2, v = (x - A y) / 2 with A the cross
Hessian at a base pair, the oscillation modulus kappa(r) of the normalized
cross Hessian, the gap inequality, Laplace-type integrals of exp(-E / eps),
and the one-dimensional stability quantities for the quadratic cost
(monotone map, barycentric projection, resolvent detachment).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exact_ot import Coupling, DualPair, _weights

__all__ = [
    "GapField",
    "MintyFrame",
    "GapReport",
    "LaplaceFit",
    "MapTable",
    "StabilityMetrics",
    "ResolventReport",
    "gap_field",
    "minty_frame",
    "kappa",
    "gap_inequality_check",
    "laplace_integral",
    "laplace_log_integral",
    "laplace_slope_fit",
    "laplace_floor",
    "brenier_map_1d",
    "map_lipschitz_estimate",
    "stability_metrics",
    "resolvent",
    "resolvent_detachment_check",
]


@dataclass(frozen=True, eq=False)
class GapField:
    """E_ij = C_ij - phi_i - psi_j with its (numerical) zero set.

    Attributes
    ----------
    E : (n, m) ndarray
        Nonnegative gap; entries in [-feas_tol, 0) are clamped to 0.
    duals : DualPair
    zero_set_mask : (n, m) bool ndarray
        ``E <= zero_tol``.
    zero_tol : float
    """

    E: np.ndarray
    duals: DualPair
    zero_set_mask: np.ndarray
    zero_tol: float

    @property
    def shape(self):
        return self.E.shape


def gap_field(C, duals: DualPair, feas_tol: float = 1e-9) -> GapField:
    """Build the gap field; raises if the potentials violate phi + psi <= C.

    The zero set uses the tolerance ``1e-8 * (1 + max|C|)``.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (duals.phi.size, duals.psi.size):
        raise ValueError("cost matrix does not match the potentials")
    E = C - duals.phi[:, None] - duals.psi[None, :]
    worst = float(E.min())
    if worst < -feas_tol:
        raise ValueError(f"potentials are infeasible: min(C - phi - psi) = {worst:.3e}")
    np.maximum(E, 0.0, out=E)
    zero_tol = 1e-8 * (1.0 + float(np.max(np.abs(C))))
    E.setflags(write=False)
    return GapField(E, duals, E <= zero_tol, zero_tol)


@dataclass(frozen=True, eq=False)
class MintyFrame:
    """Rotated coordinates around a base pair (x_bar, y_bar).

    u(x, y) = (x + A y) / 2 and v(x, y) = (x - A y) / 2 with A the cross
    Hessian of the cost at the base pair.
    """

    x_bar: np.ndarray
    y_bar: np.ndarray
    A: np.ndarray

    def u(self, x, y):
        return 0.5 * (np.asarray(x) + np.asarray(y) @ self.A.T)

    def v(self, x, y):
        return 0.5 * (np.asarray(x) - np.asarray(y) @ self.A.T)


def minty_frame(c, x_bar, y_bar, twist_floor: float = 1e-12) -> MintyFrame:
    x_bar = np.atleast_1d(np.asarray(x_bar, dtype=float))
    y_bar = np.atleast_1d(np.asarray(y_bar, dtype=float))
    A = np.asarray(c.cross_hessian(x_bar, y_bar), dtype=float)
    if abs(np.linalg.det(A)) < twist_floor:
        raise ValueError(f"cross Hessian is singular at the base pair ({x_bar}, {y_bar})")
    return MintyFrame(x_bar, y_bar, A)


def _pair_samples(box_minus, box_plus, dim, samples):
    lo = np.concatenate([np.broadcast_to(np.asarray(box_minus[0], float), (dim,)),
                         np.broadcast_to(np.asarray(box_plus[0], float), (dim,))])
    hi = np.concatenate([np.broadcast_to(np.asarray(box_minus[1], float), (dim,)),
                         np.broadcast_to(np.asarray(box_plus[1], float), (dim,))])
    axes = [np.linspace(l, h, samples) for l, h in zip(lo, hi)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return grid, lo, hi


def kappa(c, box_minus, box_plus, r: float, samples: int = 11, offsets: int = 5,
          inflation: float = 1.05) -> float:
    """Sampled oscillation of the normalized cross Hessian within distance r.

    Returns ``inflation`` times the largest Frobenius norm of
    H(p')^{-1} H(p) - I and H(p) H(p')^{-1} - I over sampled pairs of
    points p, p' of the product box with max(|x - x'|, |y - y'|) <= r.
    Base points form a tensor grid with ``samples`` nodes per axis; partners
    are base points moved by a tensor grid of ``offsets`` nodes per axis in
    [-r, r], clipped to the box. Both orderings are included because the
    estimate is applied with the base-point Hessian on either side.
    Costs with a constant cross Hessian return exactly 0.
    """
    if not c.is_c2:
        raise ValueError(f"kappa needs a C^2 cost; {c.kind!r} is not")
    if r < 0:
        raise ValueError("r must be nonnegative")
    if c.constant_cross_hessian or r == 0:
        return 0.0
    d = c.dim
    base, lo, hi = _pair_samples(box_minus, box_plus, d, samples)
    steps = np.linspace(-r, r, offsets)
    shift = np.stack([g.ravel() for g in np.meshgrid(*([steps] * (2 * d)), indexing="ij")], axis=1)
    keep = np.maximum(np.linalg.norm(shift[:, :d], axis=1),
                      np.linalg.norm(shift[:, d:], axis=1)) <= r * (1 + 1e-12)
    shift = shift[keep]
    H0 = c.cross_hessian(base[:, :d], base[:, d:])
    inv0 = np.linalg.inv(H0)
    eye = np.eye(d)
    worst = 0.0
    for s in shift:
        moved = np.clip(base + s, lo, hi)
        H1 = c.cross_hessian(moved[:, :d], moved[:, d:])
        left = np.linalg.norm(inv0 @ H1 - eye, axis=(1, 2))
        right = np.linalg.norm(H1 @ inv0 - eye, axis=(1, 2))
        worst = max(worst, float(left.max()), float(right.max()))
    return inflation * worst


@dataclass(frozen=True)
class GapReport:
    """Outcome of :func:`gap_inequality_check`.

    ``worst_margin`` is the smallest value of
    E(p') + E(p) - (|du|^2 - |dv|^2) + kappa (|du|^2 + |dv|^2) over the
    sampled pairs; a violation is a margin below ``-slack``.
    ``graph_violations`` counts pairs inside the zero set that break
    |du|^2 <= (1 + kappa) / (1 - kappa) |dv|^2 (only when kappa < 1).
    """

    trials: int
    violations: int
    worst_margin: float
    kappa: float
    r: float
    base_points: int
    graph_pairs: int
    graph_violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.graph_violations == 0


def gap_inequality_check(gap: GapField, c, mu_minus, mu_plus, r: float, trials: int = 10000,
                         rng_seed: int = 0, kappa_value: float | None = None,
                         base_points: int = 8, slack: float = 1e-9,
                         box_minus=None, box_plus=None) -> GapReport:
    """Sample pairs of support pairs near base points of the zero set and test
    the gap inequality with the rotated coordinates of each base point.

    Base pairs are drawn from the zero set of ``gap``; for each, the atoms
    within max-norm distance ``r`` form the admissible product, from which
    pairs (p, p') are drawn uniformly. ``trials`` pairs are spread evenly
    over the base points. ``kappa_value`` defaults to :func:`kappa` on the
    bounding boxes of the supports.
    """
    rng = np.random.default_rng(rng_seed)
    X, Y = mu_minus.points, mu_plus.points
    if kappa_value is None:
        bm = box_minus or (X.min(axis=0), X.max(axis=0))
        bp = box_plus or (Y.min(axis=0), Y.max(axis=0))
        kappa_value = kappa(c, bm, bp, r)
    zi, zj = np.nonzero(gap.zero_set_mask)
    if zi.size == 0:
        raise ValueError("gap field has an empty zero set")
    pick = rng.choice(zi.size, size=min(base_points, zi.size), replace=False)
    per_base = -(-trials // pick.size)
    E = gap.E
    violations = 0
    graph_pairs = graph_viol = 0
    worst = math.inf
    done = 0
    for k in pick:
        frame = minty_frame(c, X[zi[k]], Y[zj[k]])
        rows = np.flatnonzero(np.linalg.norm(X - frame.x_bar, axis=1) <= r)
        cols = np.flatnonzero(np.linalg.norm(Y - frame.y_bar, axis=1) <= r)
        m = min(per_base, trials - done)
        if m <= 0:
            break
        i0, i1 = rng.choice(rows, m), rng.choice(rows, m)
        j0, j1 = rng.choice(cols, m), rng.choice(cols, m)
        du = frame.u(X[i1], Y[j1]) - frame.u(X[i0], Y[j0])
        dv = frame.v(X[i1], Y[j1]) - frame.v(X[i0], Y[j0])
        nu2 = np.sum(du * du, axis=1)
        nv2 = np.sum(dv * dv, axis=1)
        lhs = E[i1, j1] + E[i0, j0]
        margin = lhs - (nu2 - nv2) + kappa_value * (nu2 + nv2)
        violations += int(np.sum(margin < -slack))
        worst = min(worst, float(margin.min()))
        if kappa_value < 1:
            both = gap.zero_set_mask[i1, j1] & gap.zero_set_mask[i0, j0]
            bound = (1 + kappa_value) / (1 - kappa_value) * nv2[both]
            graph_pairs += int(both.sum())
            # inside the zero set the inequality holds up to the gap tolerance
            tol = 2 * gap.zero_tol / (1 - kappa_value) + slack
            graph_viol += int(np.sum(nu2[both] > bound + tol))
        done += m
    return GapReport(done, violations, worst, float(kappa_value), float(r), int(pick.size),
                     graph_pairs, graph_viol)


def laplace_log_integral(gap: GapField, mu_minus, mu_plus, eps: float) -> float:
    """log of sum_ij exp(-E_ij / eps) a_i b_j, computed with log-sum-exp."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    a, b = _weights(mu_minus), _weights(mu_plus)
    z = -gap.E / eps + np.log(a)[:, None] + np.log(b)[None, :]
    return float(min(logsumexp(z), 0.0))


def laplace_integral(gap: GapField, mu_minus, mu_plus, eps: float) -> float:
    """sum_ij exp(-E_ij / eps) a_i b_j, a number in (0, 1]."""
    return math.exp(laplace_log_integral(gap, mu_minus, mu_plus, eps))


@dataclass(frozen=True, eq=False)
class LaplaceFit:
    """Least-squares fit of log I(eps) = slope * log(eps) + intercept.

    The intercept is an empirical value of log C in I(eps) <= C eps^slope.
    """

    slope: float
    intercept: float
    epsilons: np.ndarray
    log_values: np.ndarray
    window: tuple
    residual_max: float


def laplace_floor(c, mu) -> float:
    """Smallest temperature at which the discrete Laplace integral still
    resolves the continuum one.

    h^2 for costs with a nondegenerate quadratic detachment (the Gaussian
    width sqrt(eps) must exceed the grid spacing h), 10 h for the distance
    cost whose gap grows linearly. Zero for measures without a cell width.
    """
    h = getattr(mu, "cell_width", None)
    if h is None:
        return 0.0
    if c.kind == "abs" or (c.kind == "p-norm-power" and c.p < 2):
        return 10.0 * h
    return h * h


def laplace_slope_fit(gap: GapField, mu_minus, mu_plus, eps_ladder, floor: float = 0.0,
                      ceiling: float = 0.5) -> LaplaceFit:
    """Slope of log sum exp(-E / eps) d(mu- x mu+) against log eps.

    Rungs outside [floor, ceiling] are dropped; at least two must remain.
    """
    eps = np.sort(np.asarray(eps_ladder, dtype=float).ravel())
    keep = (eps >= floor) & (eps <= ceiling)
    if keep.sum() < 2:
        raise ValueError(f"fewer than two temperatures in [{floor:.3g}, {ceiling:.3g}]")
    eps = eps[keep]
    logs = np.array([laplace_log_integral(gap, mu_minus, mu_plus, e) for e in eps])
    X = np.column_stack([np.log(eps), np.ones_like(eps)])
    coef, *_ = np.linalg.lstsq(X, logs, rcond=None)
    resid = float(np.max(np.abs(X @ coef - logs)))
    return LaplaceFit(float(coef[0]), float(coef[1]), eps, logs,
                      (float(eps[0]), float(eps[-1])), resid)


@dataclass(frozen=True, eq=False)
class MapTable:
    """Values of a map on the atoms of the source measure.

    ``__call__`` interpolates linearly between atoms (sorted order).
    """

    x: np.ndarray
    values: np.ndarray
    target: np.ndarray

    def __call__(self, t):
        order = np.argsort(self.x)
        return np.interp(t, self.x[order], self.values[order])


def brenier_map_1d(mu_minus, mu_plus) -> MapTable:
    """Monotone rearrangement of two measures on the line.

    Atom x_i carries the mass interval (F(x_i-), F(x_i)] of the source
    distribution function; its image is the target quantile at the
    midpoint t of that interval, inf{y : G(y) > t} with G the target
    distribution function.
    """
    if mu_minus.ambient_dim != 1 or mu_plus.ambient_dim != 1:
        raise ValueError("brenier_map_1d needs measures on the line")
    x = mu_minus.points[:, 0]
    y = mu_plus.points[:, 0]
    ox = np.argsort(x, kind="stable")
    oy = np.argsort(y, kind="stable")
    F = np.cumsum(mu_minus.weights[ox])
    mid = F - 0.5 * mu_minus.weights[ox]
    G = np.cumsum(mu_plus.weights[oy])
    k = np.searchsorted(G, mid, side="right")
    k = np.minimum(k, y.size - 1)
    T = np.empty_like(x)
    T[ox] = y[oy][k]
    return MapTable(x.copy(), T, y.copy())


def map_lipschitz_estimate(T: MapTable) -> float:
    """Largest divided difference of the map between consecutive atoms.

    This is only an estimate of the Lipschitz constant of the continuum map.
    """
    order = np.argsort(T.x)
    dx = np.diff(T.x[order])
    dT = np.diff(T.values[order])
    ok = dx > 0
    if not ok.any():
        return 0.0
    return float(np.max(np.abs(dT[ok]) / dx[ok]))


@dataclass(frozen=True)
class StabilityMetrics:
    """map_mse = sum gamma_ij |y_j - T(x_i)|^2 and
    bary_mse = sum a_i |T_eps(x_i) - T(x_i)|^2 with T_eps the barycentric
    projection of the plan."""

    map_mse: float
    bary_mse: float

    @property
    def jensen_holds(self) -> bool:
        return self.bary_mse <= self.map_mse + 1e-12


def stability_metrics(plan: Coupling, T: MapTable, mu_minus=None) -> StabilityMetrics:
    """Compare an entropic plan with a transport map on the source atoms.

    The barycentric projection divides by the row sums of the plan, which
    equal the source weights for plans with exact row marginals.
    """
    P = plan.matrix
    y = T.target
    if P.shape != (T.x.size, y.size):
        raise ValueError("plan shape does not match the map table")
    rows = P.sum(axis=1)
    if np.any(rows <= 0):
        raise ValueError("plan has rows of zero mass")
    Tx = T.values
    diff = y[None, :] - Tx[:, None]
    map_mse = float(np.sum(P * diff * diff))
    T_eps = (P @ y) / rows
    bary_mse = float(np.sum(rows * (T_eps - Tx) ** 2))
    return StabilityMetrics(map_mse, bary_mse)


def _golden(fun, lo, hi, tol):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c1, c2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = fun(c1), fun(c2)
    while b - a > tol:
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - g * (b - a)
            f1 = fun(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + g * (b - a)
            f2 = fun(c2)
    return 0.5 * (a + b)


def resolvent(f, z: float, bracket, scan: int = 201, tol: float = 1e-12) -> float:
    """argmin_w (w - z)^2 / 2 + f(w) over ``bracket``: grid scan, then golden section."""
    lo, hi = float(bracket[0]), float(bracket[1])
    w = np.linspace(lo, hi, scan)
    vals = 0.5 * (w - z) ** 2 + f(w)
    k = int(np.argmin(vals))
    a = w[max(k - 1, 0)]
    b = w[min(k + 1, scan - 1)]
    return _golden(lambda t: 0.5 * (t - z) ** 2 + float(f(np.array([t]))[0]), a, b, tol)


@dataclass(frozen=True)
class ResolventReport:
    """Worst value of E(x, y) - |x - prox(x + y)|^2 over the sampled atoms."""

    samples: int
    violations: int
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def resolvent_detachment_check(gap: GapField, mu_minus, mu_plus, samples: int = 1000,
                               rng_seed: int = 0, slack: float = 1e-6) -> ResolventReport:
    """Test E(x, y) >= |x - (id + df)^{-1}(x + y)|^2 on sampled atom pairs.

    Quadratic cost on the line. The convex potential is
    f(w) = w^2 / 2 - phi(w) with phi extended off the atoms by its
    c-transform, i.e. f(w) = max_j (w y_j - y_j^2 / 2 + psi_j). Its slopes
    lie in [min y, max y], which brackets the prox point of z in
    [z - max y, z - min y].
    """
    if mu_minus.ambient_dim != 1 or mu_plus.ambient_dim != 1:
        raise ValueError("resolvent detachment check is one-dimensional")
    x = mu_minus.points[:, 0]
    y = mu_plus.points[:, 0]
    psi = gap.duals.psi
    g = 0.5 * y * y - psi

    def f(w):
        w = np.atleast_1d(w)
        return np.max(w[:, None] * y[None, :] - g[None, :], axis=1)

    rng = np.random.default_rng(rng_seed)
    n, m = gap.shape
    ii = rng.integers(0, n, samples)
    jj = rng.integers(0, m, samples)
    ylo, yhi = float(y.min()), float(y.max())
    worst = math.inf
    bad = 0
    for i, j in zip(ii, jj):
        z = x[i] + y[j]
        w = resolvent(f, z, (z - yhi, z - ylo))
        margin = gap.E[i, j] - (x[i] - w) ** 2
        worst = min(worst, margin)
        bad += margin < -slack
    return ResolventReport(int(samples), int(bad), float(worst))
