"""Grid entropy, entropy dimension, block approximation of couplings, and
the r^2 scaling law for integrated first-order Taylor remainders of convex
functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact_ot import Coupling

__all__ = [
    "GridPartition",
    "EntropyProfile",
    "BlockBoundReport",
    "AlexandrovFit",
    "grid_partition",
    "grid_entropy",
    "entropy_dimension_fit",
    "block_approximation",
    "block_bound_check",
    "alexandrov_scaling_check",
]


@dataclass(frozen=True, eq=False)
class GridPartition:
    """Atoms of a discrete measure grouped into cubes of a regular mesh.

    Attributes
    ----------
    delta : float
        Target cell diameter.
    side : float
        Edge length of the cubes, ``delta / sqrt(d)``, so every cell has
        Euclidean (hence also max-norm) diameter at most ``delta``.
    cell_index : ndarray of int
        Cell id of every atom, ids numbered 0..K-1.
    cell_masses : ndarray
        Total weight carried by every cell.
    cell_keys : (K, d) ndarray of int
        Integer mesh coordinates of the cells.
    """

    delta: float
    side: float
    cell_index: np.ndarray
    cell_masses: np.ndarray
    cell_keys: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.cell_masses.size)

    def indicator(self) -> np.ndarray:
        """(n_atoms, n_cells) 0/1 matrix of cell membership."""
        P = np.zeros((self.cell_index.size, self.n_cells))
        P[np.arange(self.cell_index.size), self.cell_index] = 1.0
        return P


def grid_partition(mu, delta: float, anchor=None) -> GridPartition:
    """Partition the support of ``mu`` by the cubic mesh anchored at ``anchor``.

    The anchor defaults to ``mu.anchor()``, the lower corner of the box a
    grid measure was built on, or the componentwise minimum of the points.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    d = mu.ambient_dim
    side = delta / np.sqrt(d)
    origin = mu.anchor() if anchor is None else np.asarray(anchor, dtype=float)
    keys = np.floor((mu.points - origin) / side).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    masses = np.bincount(inverse, weights=mu.weights, minlength=uniq.shape[0])
    return GridPartition(float(delta), float(side), inverse, masses, uniq)


def _shannon(masses) -> float:
    m = np.asarray(masses, dtype=float)
    m = m[m > 0]
    # a lone cell can carry mass 1 + O(eps_mach), whose -m log m is a tiny negative
    return max(float(-np.sum(m * np.log(m))), 0.0)


def grid_entropy(mu, delta: float) -> float:
    """Sum of m log(1/m) over the occupied cells of the mesh of diameter ``delta``."""
    return _shannon(grid_partition(mu, delta).cell_masses)


@dataclass(frozen=True, eq=False)
class EntropyProfile:
    """Grid entropies on a ladder of mesh sizes and the fitted growth rate.

    ``fitted_dim`` is the least-squares slope of H against log(1/delta)
    over the rungs in ``fit_window`` (a half-open index range into
    ``deltas``).
    """

    deltas: np.ndarray
    H_values: np.ndarray
    fitted_dim: float
    fit_window: tuple
    intercept: float = 0.0
    residual: float = 0.0


def entropy_dimension_fit(mu, delta_ladder) -> EntropyProfile:
    """Fit H_delta(mu) ~ dim * log(1 / delta) + const.

    Rungs outside (4 * cell_width, diameter) are computed but excluded from
    the fit, since below a few cell widths the discrete measure looks like a
    finite set of atoms and above the diameter a single cell holds all mass.
    A single atom has zero grid entropy at every scale and gets dimension 0.
    """
    deltas = np.sort(np.asarray(delta_ladder, dtype=float).ravel())[::-1]
    if deltas.size == 0 or np.any(deltas <= 0):
        raise ValueError("delta ladder must hold positive values")
    H = np.array([grid_entropy(mu, dl) for dl in deltas])
    if len(mu) == 1:
        return EntropyProfile(deltas, H, 0.0, (0, deltas.size), 0.0, 0.0)
    lo = 4 * mu.cell_width if mu.cell_width is not None else 0.0
    hi = mu.diameter
    inside = np.flatnonzero((deltas > lo) & (deltas < hi))
    if inside.size < 2:
        raise ValueError(f"no usable rungs: need at least two deltas in ({lo:.3g}, {hi:.3g})")
    window = (int(inside[0]), int(inside[-1]) + 1)
    t = np.log(1.0 / deltas[window[0]:window[1]])
    y = H[window[0]:window[1]]
    X = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.max(np.abs(X @ coef - y)))
    return EntropyProfile(deltas, H, max(float(coef[0]), 0.0), window, float(coef[1]), resid)


def _block_density(gamma0: Coupling, part_minus: GridPartition, part_plus: GridPartition):
    P = gamma0.matrix
    a, b = gamma0.row_marginal, gamma0.col_marginal
    km, kp = part_minus.cell_index, part_plus.cell_index
    if km.size != a.size or kp.size != b.size:
        raise ValueError("partitions do not match the coupling's supports")
    G = part_minus.indicator().T @ (P @ part_plus.indicator())
    A = np.bincount(km, weights=a, minlength=part_minus.n_cells)
    B = np.bincount(kp, weights=b, minlength=part_plus.n_cells)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(G > 0, G / np.outer(A, B), 0.0)
    return G, A, B, R


def block_approximation(gamma0: Coupling, part_minus: GridPartition,
                        part_plus: GridPartition, marginal_tol: float = 1e-9) -> Coupling:
    """Replace ``gamma0`` on every product cell by the product of the marginals.

    On the block A_k x B_l the result is

        gamma0(A_k x B_l) * (mu-|A_k / mu-(A_k)) x (mu+|B_l / mu+(B_l))

    so its marginals are those of ``gamma0`` and its density with respect
    to mu- x mu+ is constant on blocks.
    """
    if gamma0.marginal_error() > marginal_tol:
        raise ValueError(f"input coupling misses its marginals by {gamma0.marginal_error():.3e}")
    _, _, _, R = _block_density(gamma0, part_minus, part_plus)
    a, b = gamma0.row_marginal, gamma0.col_marginal
    M = R[part_minus.cell_index][:, part_plus.cell_index] * np.outer(a, b)
    return Coupling(M, a, b)


@dataclass(frozen=True)
class BlockBoundReport:
    """Slacks of the two inequalities that make the block coupling a competitor.

    cost_slack = cost0 + c_lip * delta - cost_delta
    entropic_slack = cost_delta + eps * entropy_delta - v_eps
    Both are nonnegative when the chain holds.
    """

    cost0: float
    cost_delta: float
    entropy_delta: float
    v_eps: float
    cost_slack: float
    entropic_slack: float
    marginal_error: float

    @property
    def passed(self) -> bool:
        return self.cost_slack >= -1e-9 and self.entropic_slack >= -1e-8


def block_bound_check(C, gamma0: Coupling, gamma_delta: Coupling, c_lip: float, delta: float,
                      eps: float, v_eps: float | None = None, sinkhorn_cfg=None) -> BlockBoundReport:
    """Check cost(gamma_delta) <= cost(gamma0) + c_lip * delta and
    v_eps <= cost(gamma_delta) + eps * Ent(gamma_delta).

    ``v_eps`` is computed with :func:`solve_sinkhorn` when not supplied.
    """
    C = np.asarray(C, dtype=float)
    if v_eps is None:
        from .sinkhorn import SinkhornConfig, solve_sinkhorn
        cfg = sinkhorn_cfg or SinkhornConfig(epsilon=eps, tol=1e-12, max_iter=100000)
        v_eps = solve_sinkhorn(C, gamma0.row_marginal, gamma0.col_marginal, cfg).v_eps
    cost0 = gamma0.cost(C)
    cost_d = gamma_delta.cost(C)
    ent_d = gamma_delta.entropy()
    merr = max(float(np.max(np.abs(gamma_delta.row_marginal - gamma0.row_marginal))),
               float(np.max(np.abs(gamma_delta.col_marginal - gamma0.col_marginal))),
               gamma_delta.marginal_error())
    return BlockBoundReport(cost0, cost_d, ent_d, float(v_eps),
                            cost0 + c_lip * delta - cost_d,
                            cost_d + eps * ent_d - float(v_eps), merr)


@dataclass(frozen=True, eq=False)
class AlexandrovFit:
    """Integrated Taylor remainders L(r) and their log-log slope.

    ``exponent`` is NaN and ``exact_zero`` is True when L vanishes on the
    whole ladder (affine input).
    """

    exponent: float
    radii: np.ndarray
    L: np.ndarray
    exact_zero: bool
    intercept: float = float("nan")


def alexandrov_scaling_check(x, f, r_ladder, slopes=None, zero_tol: float = 1e-12) -> AlexandrovFit:
    """Fit the growth of L(r) = sum_x sup_{|y - x| <= r} |f(y) - f(x) - f'(x)(y - x)| dx.

    Parameters
    ----------
    x : (N,) array
        Uniform grid on an interval.
    f : (N,) array
        Values of a convex (or semiconvex) function on the grid.
    r_ladder : array_like
        Radii, each at least four grid steps. The sup runs over grid points
        y, so radii are rounded down to whole steps.
    slopes : (N,) array, optional
        Subgradient selection f'(x). Defaults to backward differences (the
        left derivative of the piecewise linear interpolant), with a forward
        difference at the first node.
    zero_tol : float
        L values below ``zero_tol * (1 + max|f|) * length`` count as zero.

    Returns
    -------
    AlexandrovFit
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    if x.ndim != 1 or x.shape != f.shape or x.size < 3:
        raise ValueError("x and f must be matching 1-D arrays")
    steps = np.diff(x)
    h = float(steps.mean())
    if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise ValueError("x must be a uniform grid")
    if slopes is None:
        slopes = np.empty_like(f)
        slopes[1:] = np.diff(f) / h
        slopes[0] = slopes[1]
    slopes = np.asarray(slopes, dtype=float)
    r = np.sort(np.asarray(r_ladder, dtype=float).ravel())
    if r.size < 2:
        raise ValueError("need at least two radii")
    k = np.floor(r / h + 1e-9).astype(int)
    if np.any(k < 4):
        raise ValueError(f"radii below resolution: need r >= 4h = {4 * h:.3g}")
    n = x.size
    running = np.zeros(n)
    L = np.empty(k.size)
    want = {int(kk): [] for kk in k}
    for pos, kk in enumerate(k):
        want[int(kk)].append(pos)
    for s in range(1, int(k.max()) + 1):
        if s < n:
            fwd = np.abs(f[s:] - f[:-s] - slopes[:-s] * (x[s:] - x[:-s]))
            bwd = np.abs(f[:-s] - f[s:] - slopes[s:] * (x[:-s] - x[s:]))
            np.maximum(running[:-s], fwd, out=running[:-s])
            np.maximum(running[s:], bwd, out=running[s:])
        for pos in want.get(s, ()):
            L[pos] = running.sum() * h
    radii = k * h
    scale = zero_tol * (1.0 + float(np.max(np.abs(f)))) * (x[-1] - x[0] + h)
    if np.all(L <= scale):
        return AlexandrovFit(float("nan"), radii, L, True)
    keep = L > scale
    coef = np.polyfit(np.log(radii[keep]), np.log(L[keep]), 1)
    return AlexandrovFit(float(coef[0]), radii, L, False, float(coef[1]))
