"""Discrete probability measures on boxes and segments.

Continuum marginals with bounded densities are represented through their
midpoint-rule discretisation on a regular grid. Segment supports (1-D curves
embedded in the plane) are handled the same way along arclength.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import erf, sqrt

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

__all__ = [
    "DensitySpec",
    "DiscreteMeasure",
    "Diagnostics",
    "grid_measure",
    "segment_measure",
    "atom_measure",
    "validate",
    "support_diameter",
]

DENSITY_KINDS = ("uniform", "affine-ramp", "truncated-bump")


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud in R^d.

    Zero-weight atoms are dropped at construction; the arrays are stored
    read-only. Mass normalisation and distinctness are *not* enforced here so
    that :func:`validate` can report them.

    Parameters
    ----------
    points : array-like, shape (n, d) or (n,)
        Atom locations. A 1-D array is read as n points in R^1.
    weights : array-like, shape (n,)
        Nonnegative masses.
    cell_width : float, optional
        Grid spacing h of the discretisation that produced the atoms.
    lower : array-like, optional
        Lower corner of the box the grid was built on; used to anchor
        covering meshes.
    """

    points: np.ndarray
    weights: np.ndarray
    cell_width: float | None = None
    lower: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise ValueError(
                f"points {pts.shape} and weights {w.shape} have incompatible shapes")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        keep = w > 0
        pts = np.ascontiguousarray(pts[keep])
        w = np.ascontiguousarray(w[keep])
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if self.lower is not None:
            lo = np.asarray(self.lower, dtype=float).ravel().copy()
            lo.flags.writeable = False
            object.__setattr__(self, "lower", lo)
        if self.cell_width is not None and not self.cell_width > 0:
            raise ValueError("cell_width must be positive")

    def __len__(self):
        return self.weights.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def diameter(self) -> float:
        return support_diameter(self.points)

    def anchor(self) -> np.ndarray:
        """Lower corner used to anchor cubic meshes."""
        if self.lower is not None:
            return self.lower
        return self.points.min(axis=0)

    def same_as(self, other: "DiscreteMeasure") -> bool:
        return self is other or (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True)
class DensitySpec:
    """Bounded probability density on a box or on a segment.

    ``support`` holds two points: the lower and upper corners of an
    axis-aligned box, or the two endpoints of a segment when
    ``on_segment`` is set. On a segment, densities are expressed in the
    arclength parameter ``t in [0, 1]``.

    Kinds and their ``params``:

    * ``uniform``: no parameters.
    * ``affine-ramp``: ``intercept`` (float) and ``slope`` (one value per
      axis, or a scalar on a segment); raw density
      ``intercept + slope . (x - lower)``, normalised to unit mass.
    * ``truncated-bump``: ``center`` and ``width``; a Gaussian bump
      restricted to the support and normalised.
    """

    kind: str
    support: tuple
    params: dict = field(default_factory=dict)
    on_segment: bool = False

    @classmethod
    def box(cls, lower, upper, kind="uniform", **params):
        lower = tuple(float(v) for v in np.atleast_1d(lower))
        upper = tuple(float(v) for v in np.atleast_1d(upper))
        return cls(kind, (lower, upper), params)

    @classmethod
    def segment(cls, start, end, kind="uniform", **params):
        start = tuple(float(v) for v in np.atleast_1d(start))
        end = tuple(float(v) for v in np.atleast_1d(end))
        return cls(kind, (start, end), params, on_segment=True)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.support[0], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.support[1], dtype=float)

    @property
    def param_dim(self) -> int:
        """Dimension of the parameter domain (1 on a segment)."""
        return 1 if self.on_segment else self.lower.shape[0]

    def _param_box(self):
        if self.on_segment:
            return np.zeros(1), np.ones(1)
        return self.lower, self.upper

    def check(self):
        """Raise ``ValueError`` unless the spec induces a bounded probability density."""
        if self.kind not in DENSITY_KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}; expected one of {DENSITY_KINDS}")
        lo, hi = self.lower, self.upper
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("support needs two points of equal dimension")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("unbounded support")
        if self.on_segment:
            if np.allclose(lo, hi):
                raise ValueError("segment endpoints must be distinct")
        elif np.any(hi <= lo):
            raise ValueError("box needs upper > lower along every axis")
        if self.kind == "affine-ramp":
            a = float(self.params.get("intercept", 0.0))
            s = np.broadcast_to(np.asarray(self.params.get("slope", 0.0), dtype=float),
                                (self.param_dim,))
            plo, phi = self._param_box()
            # an affine function is minimal at a corner of the box
            corner_min = a + np.sum(np.minimum(s * 0.0, s * (phi - plo)))
            if not np.all(np.isfinite(s)) or not np.isfinite(a):
                raise ValueError("affine-ramp parameters must be finite")
            if corner_min < -1e-12:
                raise ValueError("affine-ramp density is negative on part of the support")
            if self._raw_mass() <= 0:
                raise ValueError("affine-ramp density is not normalisable (zero mass)")
        elif self.kind == "truncated-bump":
            width = float(self.params.get("width", 0.0))
            if not width > 0 or not np.isfinite(width):
                raise ValueError("truncated-bump needs a positive finite width")
            center = np.broadcast_to(np.asarray(self.params.get("center", 0.5), dtype=float),
                                     (self.param_dim,))
            if not np.all(np.isfinite(center)):
                raise ValueError("truncated-bump center must be finite")
            if self._raw_mass() <= 0:
                raise ValueError("truncated-bump has no mass on the support")
        return self

    def _raw_mass(self) -> float:
        """Exact integral of the unnormalised density over the parameter box."""
        lo, hi = self._param_box()
        if self.kind == "uniform":
            return float(np.prod(hi - lo))
        if self.kind == "affine-ramp":
            a = float(self.params.get("intercept", 0.0))
            s = np.broadcast_to(np.asarray(self.params.get("slope", 0.0), dtype=float), lo.shape)
            return float(np.prod(hi - lo) * (a + np.sum(s * (hi - lo)) / 2))
        center = np.broadcast_to(np.asarray(self.params.get("center", 0.5), dtype=float), lo.shape)
        width = float(self.params["width"])
        mass = 1.0
        for c, l, u in zip(center, lo, hi):
            z = sqrt(2.0) * width
            mass *= width * sqrt(np.pi / 2) * (erf((u - c) / z) - erf((l - c) / z))
        return float(mass)

    def density(self, t: np.ndarray) -> np.ndarray:
        """Normalised density at parameter points ``t`` of shape (k, param_dim)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        lo, _ = self._param_box()
        if self.kind == "uniform":
            raw = np.ones(t.shape[0])
        elif self.kind == "affine-ramp":
            a = float(self.params.get("intercept", 0.0))
            s = np.broadcast_to(np.asarray(self.params.get("slope", 0.0), dtype=float), lo.shape)
            raw = a + (t - lo) @ s
        else:
            center = np.broadcast_to(np.asarray(self.params.get("center", 0.5), dtype=float),
                                     lo.shape)
            width = float(self.params["width"])
            raw = np.exp(-np.sum((t - center) ** 2, axis=1) / (2 * width ** 2))
        return np.maximum(raw, 0.0) / self._raw_mass()


def grid_measure(spec: DensitySpec, n_per_axis: int) -> DiscreteMeasure:
    """Midpoint-rule discretisation of a density on ``n_per_axis`` cells per axis.

    Weights are the density at cell centres, renormalised to unit mass.
    On a segment, ``n_per_axis`` cells are laid along arclength.

    >>> mu = grid_measure(DensitySpec.box([0.0], [1.0]), 4)
    >>> mu.points.ravel().tolist()
    [0.125, 0.375, 0.625, 0.875]
    """
    if int(n_per_axis) != n_per_axis or n_per_axis < 2:
        raise ValueError("n_per_axis must be an integer >= 2")
    n = int(n_per_axis)
    spec.check()
    lo, hi = spec._param_box()
    axes = [l + (np.arange(n) + 0.5) * (u - l) / n for l, u in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    t = np.stack([m.ravel() for m in mesh], axis=1)
    w = spec.density(t)
    if spec.on_segment:
        start, end = spec.lower, spec.upper
        points = start + t[:, :1] * (end - start)
        width = float(np.linalg.norm(end - start)) / n
        lower = np.minimum(start, end)
    else:
        points = t
        width = float(np.max(hi - lo)) / n
        lower = lo
    total = w.sum()
    if not total > 0:
        raise ValueError("density vanishes at every cell centre")
    if spec.kind == "uniform":
        w = np.full(w.shape, 1.0 / w.shape[0])
    else:
        w = w / total
    return DiscreteMeasure(points, w, cell_width=width, lower=lower)


def segment_measure(endpoints, n: int) -> DiscreteMeasure:
    """``n`` equally weighted atoms at the cell midpoints of a segment.

    >>> segment_measure(((0, 0), (1, 1)), 2).points.tolist()
    [[0.25, 0.25], [0.75, 0.75]]
    """
    start, end = (np.asarray(p, dtype=float).ravel() for p in endpoints)
    if start.shape != end.shape:
        raise ValueError("endpoints must have the same dimension")
    if np.allclose(start, end):
        raise ValueError("segment endpoints must be distinct")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    t = (np.arange(n) + 0.5) / n
    points = start + t[:, None] * (end - start)
    return DiscreteMeasure(points, np.full(n, 1.0 / n),
                           cell_width=float(np.linalg.norm(end - start)) / n,
                           lower=np.minimum(start, end))


def atom_measure(point) -> DiscreteMeasure:
    """Dirac mass at ``point``."""
    p = np.atleast_1d(np.asarray(point, dtype=float))
    return DiscreteMeasure(p[None, :], np.ones(1))


def support_diameter(points: np.ndarray) -> float:
    """Euclidean diameter of a finite point set."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[1] == 1:
        return float(np.ptp(pts[:, 0]))
    centred = pts - pts.mean(axis=0)
    # project onto the affine hull so that flat sets (segments) stay tractable
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * max(s[0], 1.0)))
    if rank == 0:
        return 0.0
    proj = centred @ vt[:rank].T
    if rank == 1:
        return float(np.ptp(proj[:, 0]))
    if proj.shape[0] > 2000:
        proj = proj[ConvexHull(proj).vertices]
    return float(pdist(proj).max())


@dataclass(frozen=True)
class Diagnostics:
    weight_sum_error: float
    min_weight: float
    diameter: float
    n_atoms: int
    n_duplicates: int
    flags: tuple

    @property
    def ok(self) -> bool:
        return not self.flags


def validate(mu: DiscreteMeasure, sum_tol: float = 1e-12) -> Diagnostics:
    """Report violated invariants of a measure without raising."""
    flags = []
    n = len(mu)
    err = abs(float(mu.weights.sum()) - 1.0) if n else 1.0
    if err > sum_tol:
        flags.append("weight-sum")
    if n == 0:
        flags.append("empty")
    min_w = float(mu.weights.min()) if n else 0.0
    if n and min_w <= 0:
        flags.append("nonpositive-weight")
    n_dup = n - np.unique(mu.points, axis=0).shape[0] if n else 0
    if n_dup:
        flags.append("duplicate-points")
    return Diagnostics(err, min_w, mu.diameter if n else 0.0, n, int(n_dup), tuple(flags))
