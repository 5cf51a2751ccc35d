"""Cost functions c(x, y) with analytic derivatives and the regularity
constants that enter the rate bounds (Lipschitz, semiconcavity, twist).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "CostModel",
    "CostConstants",
    "TwistReport",
    "cost_matrix",
    "cross_hessian",
    "check_twist",
    "lipschitz_estimate",
    "semiconcavity_estimate",
    "cost_constants",
]

COST_KINDS = ("quadratic", "abs", "p-norm-power", "bilinear", "polynomial-custom")

#: inflation applied to sampled suprema so they behave as upper bounds
INFLATION = 1.05


@dataclass(frozen=True)
class CostModel:
    """Cost on R^d x R^d.

    kinds
        ``quadratic``          c = |x - y|^2 / 2
        ``abs``                c = |x - y|
        ``p-norm-power``       c = |x - y|^p, p >= 1
        ``bilinear``           c = -x . y
        ``polynomial-custom``  c = sum_r P(x_r, y_r) with
                               P(s, t) = sum_{k,l} coeffs[k][l] s^k t^l

    ``|.|`` is the Euclidean norm. The custom polynomial acts coordinatewise,
    so its cross-Hessian is diagonal.
    """

    kind: str
    dim: int = 1
    p: float = 2.0
    coeffs: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}; expected one of {COST_KINDS}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind == "p-norm-power" and not self.p >= 1:
            raise ValueError("p-norm-power needs p >= 1")
        if self.kind == "polynomial-custom":
            table = np.asarray(self.coeffs, dtype=float)
            if table.ndim != 2 or table.size == 0:
                raise ValueError("polynomial-custom needs a 2-D coefficient table")
            object.__setattr__(self, "coeffs", tuple(map(tuple, table.tolist())))

    @classmethod
    def polynomial(cls, coeffs, dim: int = 1) -> "CostModel":
        return cls("polynomial-custom", dim=dim, coeffs=tuple(map(tuple, coeffs)))

    @property
    def is_c2(self) -> bool:
        if self.kind == "abs":
            return False
        if self.kind == "p-norm-power":
            return self.p >= 2
        return True

    @property
    def constant_cross_hessian(self) -> bool:
        return self.kind in ("quadratic", "bilinear") or (
            self.kind == "p-norm-power" and self.p == 2)

    @property
    def difference_convex(self) -> bool:
        """True when c(x, y) = h(x - y) with h convex."""
        return self.kind in ("quadratic", "abs", "p-norm-power")

    def _table(self):
        return np.asarray(self.coeffs, dtype=float)

    def _split(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[-1] != self.dim or y.shape[-1] != self.dim:
            raise ValueError(
                f"points of dimension {x.shape[-1]}/{y.shape[-1]} given to a cost on R^{self.dim}")
        return x, y

    def value(self, x, y) -> np.ndarray:
        """c(x, y), broadcasting over leading axes; last axis is the coordinate."""
        x, y = self._split(x, y)
        z = x - y
        if self.kind == "quadratic":
            return 0.5 * np.sum(z * z, axis=-1)
        if self.kind == "abs":
            return np.sqrt(np.sum(z * z, axis=-1))
        if self.kind == "p-norm-power":
            return np.sqrt(np.sum(z * z, axis=-1)) ** self.p
        if self.kind == "bilinear":
            return -np.sum(x * y, axis=-1)
        a = self._table()
        out = 0.0
        for k, l in zip(*np.nonzero(a)):
            out = out + a[k, l] * np.sum(x ** k * y ** l, axis=-1)
        return out + np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1])

    def grad(self, x, y):
        """(grad_x c, grad_y c) at (x, y); each with the shape of the broadcast points."""
        x, y = self._split(x, y)
        x, y = np.broadcast_arrays(x, y)
        z = x - y
        if self.kind == "quadratic":
            return z, -z
        if self.kind in ("abs", "p-norm-power"):
            r = np.sqrt(np.sum(z * z, axis=-1, keepdims=True))
            p = 1.0 if self.kind == "abs" else self.p
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(r > 0, p * r ** (p - 2) * z, 0.0)
            return g, -g
        if self.kind == "bilinear":
            return -y, -x
        a = self._table()
        gx = np.zeros_like(x)
        gy = np.zeros_like(y)
        for k, l in zip(*np.nonzero(a)):
            if k:
                gx = gx + a[k, l] * k * x ** (k - 1) * y ** l
            if l:
                gy = gy + a[k, l] * l * x ** k * y ** (l - 1)
        return gx, gy

    def cross_hessian(self, x, y) -> np.ndarray:
        """Matrix of mixed derivatives d^2 c / dx_i dy_j; shape (..., d, d)."""
        if not self.is_c2:
            raise ValueError(f"cross_hessian needs a C^2 cost; {self.kind!r}"
                             + (f" with p={self.p}" if self.kind == "p-norm-power" else "")
                             + " is not")
        x, y = self._split(x, y)
        x, y = np.broadcast_arrays(x, y)
        d = self.dim
        eye = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d))
        if self.kind in ("quadratic", "bilinear"):
            return -eye.copy()
        if self.kind == "p-norm-power":
            z = x - y
            r2 = np.sum(z * z, axis=-1)[..., None, None]
            p = self.p
            outer = z[..., :, None] * z[..., None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                unit_outer = np.where(r2 > 0, outer / r2, 0.0)
                scale = np.where(r2 > 0, r2 ** ((p - 2) / 2), 1.0 if p == 2 else 0.0)
            return -p * scale * (eye + (p - 2) * unit_outer)
        a = self._table()
        diag = np.zeros_like(x)
        for k, l in zip(*np.nonzero(a)):
            if k and l:
                diag = diag + a[k, l] * k * l * x ** (k - 1) * y ** (l - 1)
        return diag[..., :, None] * eye

    def hessian(self, x, y) -> np.ndarray:
        """Full Hessian of c in the pair variable (x, y); shape (..., 2d, 2d)."""
        if not self.is_c2:
            raise ValueError(f"hessian needs a C^2 cost; {self.kind!r} is not")
        x, y = self._split(x, y)
        x, y = np.broadcast_arrays(x, y)
        d = self.dim
        eye = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d))
        if self.kind == "quadratic":
            hxx = eye
        elif self.kind == "bilinear":
            hxx = 0 * eye
        elif self.kind == "p-norm-power":
            hxx = -self.cross_hessian(x, y)
        else:
            a = self._table()
            dxx = np.zeros_like(x)
            dyy = np.zeros_like(y)
            for k, l in zip(*np.nonzero(a)):
                if k >= 2:
                    dxx = dxx + a[k, l] * k * (k - 1) * x ** (k - 2) * y ** l
                if l >= 2:
                    dyy = dyy + a[k, l] * l * (l - 1) * x ** k * y ** (l - 2)
            hxy = self.cross_hessian(x, y)
            top = np.concatenate([dxx[..., :, None] * eye, hxy], axis=-1)
            bottom = np.concatenate([np.swapaxes(hxy, -1, -2), dyy[..., :, None] * eye], axis=-1)
            return np.concatenate([top, bottom], axis=-2)
        hxy = self.cross_hessian(x, y)
        top = np.concatenate([hxx, hxy], axis=-1)
        bottom = np.concatenate([np.swapaxes(hxy, -1, -2), hxx], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


@dataclass(frozen=True)
class CostConstants:
    lipschitz: float
    lam: float
    twist_margin: float


@dataclass(frozen=True)
class TwistReport:
    twist_margin: float
    argmin: tuple


def _points(mu):
    return mu.points if hasattr(mu, "points") else np.atleast_2d(np.asarray(mu, dtype=float))


def cost_matrix(c: CostModel, mu_minus, mu_plus) -> np.ndarray:
    """Dense matrix C[i, j] = c(x_i, y_j) between the supports of two measures."""
    x = _points(mu_minus)
    y = _points(mu_plus)
    if x.shape[1] != c.dim or y.shape[1] != c.dim:
        raise ValueError(
            f"measures live in R^{x.shape[1]} and R^{y.shape[1]} but the cost is on R^{c.dim}")
    if c.kind == "quadratic":
        if c.dim == 1:
            diff = x[:, 0][:, None] - y[:, 0][None, :]
            return 0.5 * diff * diff
        sq = 0.5 * (np.sum(x * x, axis=1)[:, None] + np.sum(y * y, axis=1)[None, :])
        out = sq - x @ y.T
        np.maximum(out, 0.0, out=out)
        return out
    if c.kind == "bilinear":
        return -(x @ y.T)
    if c.kind in ("abs", "p-norm-power"):
        D = cdist(x, y)
        if c.kind == "p-norm-power" and c.p != 1:
            np.power(D, c.p, out=D)
        return D
    return c.value(x[:, None, :], y[None, :, :])


def cross_hessian(c: CostModel, x, y) -> np.ndarray:
    """d x d matrix of mixed second derivatives of ``c`` at a single pair (x, y)."""
    return c.cross_hessian(np.atleast_1d(x), np.atleast_1d(y))


def _as_box(box, dim):
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float).ravel(), (dim,)) for v in box)
    if np.any(hi < lo):
        raise ValueError("box needs upper >= lower")
    return lo, hi


def _pair_grid(c, box_minus, box_plus, samples):
    d = c.dim
    lo_m, hi_m = _as_box(box_minus, d)
    lo_p, hi_p = _as_box(box_plus, d)
    axes = [np.linspace(l, h, samples) for l, h in zip(np.r_[lo_m, lo_p], np.r_[hi_m, hi_p])]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[:, :d], pts[:, d:]


def check_twist(c: CostModel, box_minus, box_plus, samples_per_axis: int = 11) -> TwistReport:
    """Smallest |det d^2_xy c| over a tensor grid of the product box.

    A positive margin certifies invertibility of the cross-Hessian at every
    sampled pair.
    """
    if not c.is_c2:
        raise ValueError(f"twist is undefined for the non-C^2 cost {c.kind!r}")
    x, y = _pair_grid(c, box_minus, box_plus, samples_per_axis)
    dets = np.abs(np.linalg.det(c.cross_hessian(x, y)))
    k = int(np.argmin(dets))
    return TwistReport(float(dets[k]), (tuple(x[k]), tuple(y[k])))


def _sup_dist(box_minus, box_plus, dim):
    lo_m, hi_m = _as_box(box_minus, dim)
    lo_p, hi_p = _as_box(box_plus, dim)
    per_axis = np.maximum(np.abs(hi_m - lo_p), np.abs(hi_p - lo_m))
    return float(np.linalg.norm(per_axis))


def _sup_norm(box, dim):
    lo, hi = _as_box(box, dim)
    return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))


def lipschitz_estimate(c: CostModel, box_minus, box_plus, norm: str = "max",
                       samples_per_axis: int = 21) -> float:
    """Upper bound on the Lipschitz constant of ``c`` on the product box.

    ``norm="max"`` measures displacements of the pair with
    ||(x, y)|| = max(|x|, |y|), whose dual norm is |grad_x c| + |grad_y c|;
    this is the constant that controls cost changes under couplings moved by
    at most delta in both variables at once. ``norm="partial"`` returns the
    larger of the two one-variable constants, sup max(|grad_x c|, |grad_y c|).

    Closed forms are used for ``abs``, ``quadratic`` and ``bilinear``; other
    kinds are sampled on a tensor grid and inflated by 5%.
    """
    if norm not in ("max", "partial"):
        raise ValueError("norm must be 'max' or 'partial'")
    d = c.dim
    both = norm == "max"
    if c.kind == "abs":
        return 2.0 if both else 1.0
    if c.kind == "quadratic" or (c.kind == "p-norm-power" and c.p == 1):
        if c.kind == "p-norm-power":
            return 2.0 if both else 1.0
        s = _sup_dist(box_minus, box_plus, d)
        return 2 * s if both else s
    if c.kind == "bilinear":
        sx, sy = _sup_norm(box_minus, d), _sup_norm(box_plus, d)
        return sx + sy if both else max(sx, sy)
    x, y = _pair_grid(c, box_minus, box_plus, samples_per_axis)
    gx, gy = c.grad(x, y)
    nx, ny = np.linalg.norm(gx, axis=1), np.linalg.norm(gy, axis=1)
    sup = np.max(nx + ny) if both else np.max(np.maximum(nx, ny))
    return float(INFLATION * sup)


def semiconcavity_estimate(c: CostModel, box_minus, box_plus,
                           samples_per_axis: int = 11) -> float:
    """Lipschitz constant of grad c on the product box (operator norm of the full Hessian)."""
    if not c.is_c2:
        raise ValueError(f"semiconcavity needs a C^2 cost; {c.kind!r} is not")
    if c.kind == "quadratic" or (c.kind == "p-norm-power" and c.p == 2):
        return 2.0 * (c.p if c.kind == "p-norm-power" else 1.0)
    if c.kind == "bilinear":
        return 1.0
    x, y = _pair_grid(c, box_minus, box_plus, samples_per_axis)
    eig = np.linalg.eigvalsh(c.hessian(x, y))
    return float(INFLATION * np.max(np.abs(eig)))


def cost_constants(c: CostModel, box_minus, box_plus, samples_per_axis: int = 11) -> CostConstants:
    lip = lipschitz_estimate(c, box_minus, box_plus)
    if not c.is_c2:
        return CostConstants(lip, float("inf"), 0.0)
    lam = semiconcavity_estimate(c, box_minus, box_plus, samples_per_axis)
    twist = check_twist(c, box_minus, box_plus, samples_per_axis).twist_margin
    return CostConstants(lip, lam, twist)


def _finite_difference_grad(c: CostModel, x, y, step=1e-5):
    """Central differences of ``c.value`` in x and in y at a single pair."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = np.empty(c.dim)
    gy = np.empty(c.dim)
    for i in range(c.dim):
        e = np.zeros(c.dim)
        e[i] = step
        gx[i] = (c.value(x + e, y) - c.value(x - e, y)) / (2 * step)
        gy[i] = (c.value(x, y + e) - c.value(x, y - e)) / (2 * step)
    return gx, gy


def _finite_difference_cross_hessian(c: CostModel, x, y, step=1e-5):
    """Central differences in y of the x-gradient; an independent check of
    :meth:`CostModel.cross_hessian`.

    Differencing the gradient rather than the values keeps the rounding
    error near eps_mach |grad c| / step instead of eps_mach |c| / step^2,
    which at step 1e-5 is the difference between 1e-10 and 1e-5. The
    gradient itself is checked against the values by
    :func:`_finite_difference_grad`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = c.dim
    out = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        gp, _ = c.grad(x, y + e)
        gm, _ = c.grad(x, y - e)
        out[:, j] = (np.asarray(gp) - np.asarray(gm)) / (2 * step)
    return out
