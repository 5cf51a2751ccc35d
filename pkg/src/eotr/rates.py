"""Temperature sweeps and the two-term fit of v_eps - v0.

The model fitted here is

    v_eps - v0 ~ a * eps * log(1 / eps) + b * eps

by least squares without intercept. For twisted C^2 costs between
d-dimensional marginals the leading coefficient is d / 2; for Lipschitz
costs it is bounded by the entropy dimension of either marginal.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import CostModel, cost_matrix
from .exact_ot import solve_exact
from .gap import laplace_floor
from .measures import DensitySpec, grid_measure
from .sinkhorn import SinkhornConfig, entropic_cost_sweep

__all__ = [
    "Instance",
    "SweepTable",
    "RateFit",
    "CSV_COLUMNS",
    "default_config",
    "default_window",
    "exact_value",
    "sweep",
    "debiased_sweep",
    "fit_rate",
    "debiased_fit",
    "shape_violations",
]

CSV_COLUMNS = ("epsilon", "v_eps", "v0", "gap", "entropy", "iterations", "residual", "converged")


@dataclass(frozen=True, eq=False)
class Instance:
    """A pair of discretized marginals and a cost.

    ``target`` and ``n_plus`` default to the source ones; in that case both
    marginals are the same :class:`DiscreteMeasure` object.
    """

    cost: CostModel
    source: DensitySpec
    n_minus: int
    target: DensitySpec | None = None
    n_plus: int | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def identical(self) -> bool:
        return self.target is None and self.n_plus in (None, self.n_minus)

    def measures(self):
        if "measures" not in self._cache:
            mu = grid_measure(self.source, self.n_minus)
            if self.identical:
                nu = mu
            else:
                nu = grid_measure(self.target or self.source, self.n_plus or self.n_minus)
            self._cache["measures"] = (mu, nu)
        return self._cache["measures"]

    def cost_matrix(self) -> np.ndarray:
        if "C" not in self._cache:
            mu, nu = self.measures()
            self._cache["C"] = cost_matrix(self.cost, mu, nu)
        return self._cache["C"]

    @property
    def cell_width(self) -> float:
        mu, nu = self.measures()
        return max(mu.cell_width or 0.0, nu.cell_width or 0.0)

    @property
    def floor(self) -> float:
        """Smallest temperature a sweep accepts without ``force``."""
        mu, nu = self.measures()
        return max(laplace_floor(self.cost, mu), laplace_floor(self.cost, nu))


def default_config(eps: float = 1.0) -> SinkhornConfig:
    return SinkhornConfig(epsilon=eps, tol=1e-10, max_iter=100000, eps_scaling=0.5)


def default_window(instance: Instance, ceiling: float = 0.1) -> tuple:
    """[max(floor, 20 h^rho), ceiling] with rho = 1 for the distance cost, 2 otherwise."""
    h = instance.cell_width
    c = instance.cost
    rho = 1 if (c.kind == "abs" or (c.kind == "p-norm-power" and c.p < 2)) else 2
    return (max(instance.floor, 20.0 * h ** rho), ceiling)


def exact_value(instance: Instance) -> float:
    """Unregularized transport cost, cached on the instance."""
    if "v0" not in instance._cache:
        mu, nu = instance.measures()
        instance._cache["v0"] = float(solve_exact(instance.cost_matrix(), mu, nu).v0)
    return instance._cache["v0"]


@dataclass(frozen=True, eq=False)
class SweepTable:
    """One row per temperature; ``gap`` is ``v_eps - v0``."""

    epsilon: np.ndarray
    v_eps: np.ndarray
    v0: float
    entropy: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    converged: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.v_eps - self.v0

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    def __len__(self):
        return int(self.epsilon.size)

    @classmethod
    def from_values(cls, epsilon, v_eps, v0: float = 0.0) -> "SweepTable":
        """Table of externally computed values, e.g. synthetic data for :func:`fit_rate`."""
        eps = np.asarray(epsilon, dtype=float).ravel()
        v = np.asarray(v_eps, dtype=float).ravel()
        if eps.shape != v.shape:
            raise ValueError("epsilon and v_eps must have the same length")
        k = eps.size
        return cls(eps, v, float(v0), np.full(k, np.nan), np.zeros(k, dtype=int),
                   np.zeros(k), np.ones(k, dtype=bool))

    def rows(self):
        for k in range(len(self)):
            yield {
                "epsilon": float(self.epsilon[k]),
                "v_eps": float(self.v_eps[k]),
                "v0": self.v0,
                "gap": float(self.v_eps[k] - self.v0),
                "entropy": float(self.entropy[k]),
                "iterations": int(self.iterations[k]),
                "residual": float(self.residual[k]),
                "converged": bool(self.converged[k]),
            }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in self.rows():
                row = dict(row)
                for key in ("epsilon", "v_eps", "v0", "gap", "entropy", "residual"):
                    row[key] = repr(row[key])
                row["converged"] = int(row["converged"])
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SweepTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no rows")
        missing = [c for c in CSV_COLUMNS if c not in rows[0]]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        col = lambda key, typ=float: np.array([typ(r[key]) for r in rows])  # noqa: E731
        return cls(col("epsilon"), col("v_eps"), float(rows[0]["v0"]), col("entropy"),
                   col("iterations", int), col("residual"),
                   col("converged", lambda s: s.strip().lower() in ("1", "true")))


def _ladder(eps_ladder) -> np.ndarray:
    eps = np.unique(np.asarray(eps_ladder, dtype=float).ravel())[::-1]
    if eps.size == 0 or np.any(eps <= 0):
        raise ValueError("temperature ladder must hold positive values")
    return eps


def _check_floor(instance: Instance, eps: np.ndarray, force: bool) -> None:
    floor = instance.floor
    if not force and eps.min() < floor:
        raise ValueError(f"temperature {eps.min():.3g} is below the discreteness floor "
                         f"{floor:.3g} of this instance; pass force=True to override")


def sweep(instance: Instance, eps_ladder, cfg: SinkhornConfig | None = None,
          force: bool = False) -> SweepTable:
    """Entropic costs along a ladder, largest temperature first, with warm starts.

    Parameters
    ----------
    instance : Instance
    eps_ladder : array_like
        Positive temperatures in any order; duplicates are merged.
    cfg : SinkhornConfig, optional
        Solver settings; ``epsilon`` is ignored. Defaults to
        :func:`default_config`.
    force : bool
        Accept temperatures below ``instance.floor``.
    """
    eps = _ladder(eps_ladder)
    _check_floor(instance, eps, force)
    mu, nu = instance.measures()
    cfg = replace(cfg or default_config(), epsilon=float(eps[0]))
    results = entropic_cost_sweep(instance.cost_matrix(), mu, nu, eps, cfg)
    return SweepTable(
        eps,
        np.array([r.v_eps for r in results]),
        exact_value(instance),
        np.array([r.entropy for r in results]),
        np.array([r.iterations for r in results], dtype=int),
        np.array([r.residual for r in results]),
        np.array([r.converged for r in results], dtype=bool),
    )


def debiased_sweep(instance: Instance, eps_ladder, cfg: SinkhornConfig | None = None,
                   force: bool = False, jobs: int = 1) -> SweepTable:
    """Sinkhorn divergences along a ladder; column ``v_eps`` holds OT_eps.

    The three entropic problems are swept separately so that each one is
    warm-started. For identical marginals every value is exactly zero and
    ``v0`` is 0. Otherwise ``entropy`` is that of the cross plan and
    ``iterations``/``residual``/``converged`` aggregate the three solves.
    With ``jobs > 1`` the three ladders run in threads.
    """
    eps = _ladder(eps_ladder)
    _check_floor(instance, eps, force)
    mu, nu = instance.measures()
    v0 = exact_value(instance)
    k = eps.size
    if instance.identical or mu.same_as(nu):
        return SweepTable(eps, np.zeros(k), 0.0, np.zeros(k), np.zeros(k, dtype=int),
                          np.zeros(k), np.ones(k, dtype=bool))
    cfg = replace(cfg or default_config(), epsilon=float(eps[0]))
    c = instance.cost
    problems = [(instance.cost_matrix(), mu, nu), (None, mu, mu), (None, nu, nu)]

    def run(problem):
        C, left_m, right_m = problem
        if C is None:
            C = cost_matrix(c, left_m, right_m)
        return entropic_cost_sweep(C, left_m, right_m, eps, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, 3)) as pool:
            cross, left, right = pool.map(run, problems)
    else:
        cross, left, right = map(run, problems)
    parts = list(zip(cross, left, right))
    return SweepTable(
        eps,
        np.array([x.v_eps - 0.5 * (l.v_eps + r.v_eps) for x, l, r in parts]),
        v0,
        np.array([x.entropy for x in cross]),
        np.array([x.iterations + l.iterations + r.iterations for x, l, r in parts], dtype=int),
        np.array([max(x.residual, l.residual, r.residual) for x, l, r in parts]),
        np.array([x.converged and l.converged and r.converged for x, l, r in parts], dtype=bool),
    )


@dataclass(frozen=True)
class RateFit:
    """Least-squares coefficients of v_eps - v0 on {eps log(1/eps), eps}.

    ``r_squared`` is the uncentered coefficient of determination appropriate
    for a regression without intercept.
    """

    a: float
    b: float
    r_squared: float
    window: tuple
    residual_max: float
    n_points: int

    def predict(self, eps):
        eps = np.asarray(eps, dtype=float)
        return self.a * eps * np.log(1.0 / eps) + self.b * eps


def fit_rate(table: SweepTable, window=None) -> RateFit:
    """Fit ``table.gap`` against eps log(1/eps) and eps over ``window``.

    Parameters
    ----------
    table : SweepTable
    window : (float, float), optional
        Closed temperature interval; all rows when omitted.

    Raises
    ------
    ValueError
        Fewer than four rows in the window, or a rank-deficient design.

    Examples
    --------
    >>> eps = np.geomspace(1e-3, 1e-1, 8)
    >>> t = SweepTable.from_values(eps, 0.5 * eps * np.log(1 / eps) + 3 * eps)
    >>> fit = fit_rate(t)
    >>> round(fit.a, 10), round(fit.b, 10)
    (0.5, 3.0)
    """
    eps = np.asarray(table.epsilon, dtype=float)
    y = np.asarray(table.gap, dtype=float)
    if window is None:
        lo, hi = float(eps.min()), float(eps.max())
    else:
        lo, hi = float(window[0]), float(window[1])
    # relative slack so that ladder end points produced by geomspace stay in
    keep = (eps >= lo * (1 - 1e-9)) & (eps <= hi * (1 + 1e-9))
    if keep.sum() < 4:
        raise ValueError(f"need at least 4 rows in [{lo:.3g}, {hi:.3g}], found {int(keep.sum())}")
    e, y = eps[keep], y[keep]
    X = np.column_stack([e * np.log(1.0 / e), e])
    if np.linalg.matrix_rank(X) < 2 or np.linalg.cond(X) > 1e12:
        raise ValueError("rank-deficient design: ladder too short or collinear")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    ss_tot = float(y @ y)
    ss_res = float(np.sum((y - fitted) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return RateFit(float(coef[0]), float(coef[1]), r2, (float(e.min()), float(e.max())),
                   float(np.max(np.abs(y - fitted))), int(e.size))


def debiased_fit(instance: Instance, eps_ladder, cfg: SinkhornConfig | None = None,
                 window=None, force: bool = False) -> RateFit:
    """:func:`fit_rate` applied to Sinkhorn divergences minus the transport cost."""
    return fit_rate(debiased_sweep(instance, eps_ladder, cfg, force), window)


def shape_violations(table: SweepTable) -> tuple:
    """Largest decrease of v_eps as eps grows and largest second divided difference.

    Both are <= 0 for a non-decreasing concave function of eps. Returns
    ``(max_decrease, max_second_difference)``; either is ``-inf`` when the
    table is too short to define it.
    """
    order = np.argsort(table.epsilon)
    e = np.asarray(table.epsilon, dtype=float)[order]
    v = np.asarray(table.v_eps, dtype=float)[order]
    dec = float(np.max(-np.diff(v))) if e.size > 1 else -math.inf
    if e.size < 3:
        return dec, -math.inf
    s = np.diff(v) / np.diff(e)
    dd = 2 * np.diff(s) / (e[2:] - e[:-2])
    return dec, float(np.max(dd))
