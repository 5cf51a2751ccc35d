"""Unregularized discrete optimal transport.

The main solver is a dense transportation simplex working on the spanning
tree of basic cells. It returns an optimal coupling together with a pair of
Kantorovich potentials, canonicalized by one c-conjugation pass and
normalized so that the first potential has zero mean under the source
measure. Two independent routes are provided for cross-checks: brute force
over permutation matrices for tiny uniform problems, and the monotone
(north-west corner) coupling of sorted supports in one dimension.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Coupling",
    "DualPair",
    "SimplexError",
    "LadderExhausted",
    "solve_exact",
    "c_conjugate_pair",
    "normalize_duals",
    "brute_force_oracle",
    "monotone_1d",
    "min_entropy_optimal_plan",
    "plan_entropy",
]


def _weights(mu) -> np.ndarray:
    w = mu.weights if hasattr(mu, "weights") else mu
    return np.asarray(w, dtype=float).ravel()


def plan_entropy(matrix, row_marginal, col_marginal) -> float:
    """Relative entropy of a plan with respect to the product of its marginals.

    Zero entries contribute nothing (0 log 0 = 0).
    """
    P = np.asarray(matrix, dtype=float)
    a = np.asarray(row_marginal, dtype=float)
    b = np.asarray(col_marginal, dtype=float)
    mask = P > 0
    ref = np.outer(a, b)[mask]
    p = P[mask]
    return float(np.sum(p * (np.log(p) - np.log(ref))))


@dataclass(frozen=True, eq=False)
class Coupling:
    """Nonnegative n x m matrix together with the marginals it was built for."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        a = _weights(self.row_marginal)
        b = _weights(self.col_marginal)
        if M.shape != (a.size, b.size):
            raise ValueError(f"coupling of shape {M.shape} does not match marginals "
                             f"({a.size}, {b.size})")
        for name, arr in (("matrix", M), ("row_marginal", a), ("col_marginal", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.matrix.shape

    def marginal_error(self) -> float:
        """Sup-norm distance between the matrix's marginals and the prescribed ones."""
        return float(max(np.max(np.abs(self.matrix.sum(axis=1) - self.row_marginal)),
                         np.max(np.abs(self.matrix.sum(axis=0) - self.col_marginal))))

    def cost(self, C) -> float:
        return float(np.sum(np.asarray(C) * self.matrix))

    def entropy(self) -> float:
        return plan_entropy(self.matrix, self.row_marginal, self.col_marginal)

    def support(self, threshold: float = 1e-12) -> np.ndarray:
        return self.matrix > threshold


@dataclass(frozen=True, eq=False)
class DualPair:
    """Potentials (phi, psi) on the source and target supports."""

    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("phi", "psi"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def value(self, row_marginal, col_marginal) -> float:
        return float(self.phi @ _weights(row_marginal) + self.psi @ _weights(col_marginal))

    def shifted(self, lam: float) -> "DualPair":
        """(phi + lam, psi - lam); leaves phi + psi unchanged."""
        return DualPair(self.phi + lam, self.psi - lam)

    def max_violation(self, C) -> float:
        """Largest value of phi_i + psi_j - C_ij (nonpositive when feasible)."""
        return float(np.max(self.phi[:, None] + self.psi[None, :] - np.asarray(C)))


def normalize_duals(duals: DualPair, row_marginal) -> DualPair:
    """Shift so that sum_i phi_i a_i = 0."""
    lam = float(duals.phi @ _weights(row_marginal))
    return duals.shifted(-lam)


def c_conjugate_pair(C, psi) -> DualPair:
    """One c-conjugation pass: phi = min_j C_ij - psi_j, then psi = min_i C_ij - phi_i."""
    C = np.asarray(C, dtype=float)
    phi = np.min(C - np.asarray(psi, dtype=float)[None, :], axis=1)
    psi_c = np.min(C - phi[:, None], axis=0)
    return DualPair(phi, psi_c)


class SimplexError(RuntimeError):
    """Raised when the transportation simplex hits its pivot cap."""

    def __init__(self, message, basis=None, pivots=None):
        super().__init__(message)
        self.basis = basis
        self.pivots = pivots


class LadderExhausted(RuntimeError):
    """Raised when the entropy of small-temperature plans fails to settle."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def _staircase(a, b, row_order, col_order):
    """North-west corner rule along the given row/column orders.

    Returns n + m - 1 basic cells (degenerate zeros included) forming a tree.
    """
    s = a[row_order].astype(float).copy()
    d = b[col_order].astype(float).copy()
    n, m = s.size, d.size
    cells, flows = [], []
    i = j = 0
    while True:
        q = min(s[i], d[j])
        cells.append((row_order[i], col_order[j]))
        flows.append(q)
        if i == n - 1 and j == m - 1:
            break
        if (s[i] <= d[j] and i < n - 1) or j == m - 1:
            d[j] -= q
            s[i] = 0.0
            i += 1
        else:
            s[i] -= q
            d[j] = 0.0
            j += 1
    return cells, flows


def _least_cost_basis(C, a, b):
    """Matrix-minimum rule followed by a cheapest-cell tree completion.

    Cells are visited in increasing cost order and each receives
    min(remaining supply, remaining demand). The positive allocations form
    a forest; it is completed to a spanning tree with zero-flow cells taken
    again in increasing cost order (Kruskal), which keeps the degenerate part
    of the basis local instead of hanging it off a single row.
    """
    n, m = C.shape
    order = np.argsort(C, axis=None, kind="stable")
    s = a.astype(float).copy()
    d = b.astype(float).copy()
    rows_left, cols_left = n, m
    cells, flows = [], []
    for flat in order:
        i, j = divmod(int(flat), m)
        if s[i] <= 0.0 or d[j] <= 0.0:
            continue
        q = min(s[i], d[j])
        cells.append((i, j))
        flows.append(q)
        if s[i] <= d[j]:
            d[j] -= q
            s[i] = 0.0
            rows_left -= 1
            cols_left -= d[j] <= 0.0
        else:
            s[i] -= q
            d[j] = 0.0
            cols_left -= 1
        if rows_left == 0 or cols_left == 0:
            break
    return _complete_tree(n, m, cells, flows, order)


def _complete_tree(n, m, cells, flows, order):
    parent = list(range(n + m))

    def find(p):
        while parent[p] != p:
            parent[p] = parent[parent[p]]
            p = parent[p]
        return p

    keep_cells, keep_flows = [], []
    for (i, j), q in zip(cells, flows):
        ri, rj = find(i), find(n + j)
        if ri == rj:
            raise SimplexError("positive allocations of the initial basis contain a cycle")
        parent[ri] = rj
        keep_cells.append((i, j))
        keep_flows.append(q)
    missing = n + m - 1 - len(keep_cells)
    if missing:
        for flat in order:
            i, j = divmod(int(flat), m)
            ri, rj = find(i), find(n + j)
            if ri == rj:
                continue
            parent[ri] = rj
            keep_cells.append((i, j))
            keep_flows.append(0.0)
            missing -= 1
            if not missing:
                break
    return keep_cells, keep_flows


class _TransportTree:
    """Basis of the transportation simplex stored as a rooted spanning tree.

    Nodes 0..n-1 are rows, n..n+m-1 are columns; every basic cell (i, j) is
    the edge between node i and node n + j. Node potentials (u for rows, v
    for columns, root u_0 = 0), parents and depths are kept current across
    pivots; a pivot only touches the subtree that is cut off and re-hung.
    """

    def __init__(self, C, cells, flows):
        self.C = C
        self.n, self.m = C.shape
        N = self.n + self.m
        self.adj = [set() for _ in range(N)]
        self.flow = {}
        for (i, j), q in zip(cells, flows):
            self.adj[i].add(self.n + j)
            self.adj[self.n + j].add(i)
            self.flow[(i, j)] = q
        if len(self.flow) != N - 1:
            raise SimplexError("initial basis is not a spanning tree", basis=sorted(self.flow))
        self.pot = np.zeros(N)
        self.parent = np.full(N, -1)
        self.depth = np.zeros(N, dtype=int)
        if len(self._hang(0, -1)) != N:
            raise SimplexError("initial basis is not connected", basis=sorted(self.flow))

    @property
    def u(self):
        return self.pot[:self.n]

    @property
    def v(self):
        return self.pot[self.n:]

    def _cell(self, p, q):
        return (p, q - self.n) if p < self.n else (q, p - self.n)

    def _hang(self, top, above):
        """Set parent, depth and potentials below ``top``, whose parent is ``above``.

        Returns the visited nodes.
        """
        pot, parent, depth, C = self.pot, self.parent, self.depth, self.C
        parent[top] = above
        if above >= 0:
            depth[top] = depth[above] + 1
            i, j = self._cell(top, above)
            pot[top] = C[i, j] - pot[above]
        else:
            depth[top] = 0
            pot[top] = 0.0
        visited = [top]
        stack = [top]
        while stack:
            p = stack.pop()
            for q in self.adj[p]:
                if q == parent[p]:
                    continue
                parent[q] = p
                depth[q] = depth[p] + 1
                i, j = self._cell(p, q)
                pot[q] = C[i, j] - pot[p]
                visited.append(q)
                stack.append(q)
        return visited

    def cycle(self, i, j):
        """Cells of the tree path closing a cycle with entering cell (i, j).

        Ordered from the cell adjacent to column j, so signs along the list
        alternate -, +, -, ...
        """
        parent, depth = self.parent, self.depth
        a, b = i, self.n + j
        left, right = [], []
        while a != b:
            if depth[a] >= depth[b]:
                left.append(self._cell(a, parent[a]))
                a = parent[a]
            else:
                right.append(self._cell(b, parent[b]))
                b = parent[b]
        return right + left[::-1]

    def pivot(self, enter, path, flat_index):
        minus = path[0::2]
        theta = min(self.flow[c] for c in minus)
        leaving = min((c for c in minus if self.flow[c] <= theta), key=flat_index)
        for k, c in enumerate(path):
            self.flow[c] += -theta if k % 2 == 0 else theta
        i, j = enter
        n = self.n
        self.flow[enter] = theta
        del self.flow[leaving]
        li, lj = leaving
        # the endpoint of the leaving cell farther from the root heads the cut subtree
        lower = li if self.parent[li] == n + lj else n + lj
        self.adj[li].discard(n + lj)
        self.adj[n + lj].discard(li)
        # find which endpoint of the entering cell sits in the cut subtree
        node = i
        while node != lower and node >= 0:
            node = self.parent[node]
        inside, outside = (i, n + j) if node == lower else (n + j, i)
        self.adj[i].add(n + j)
        self.adj[n + j].add(i)
        self._hang(inside, outside)
        return theta

    def matrix(self):
        P = np.zeros((self.n, self.m))
        for (i, j), q in self.flow.items():
            P[i, j] = max(q, 0.0)
        return P


def _support_duals(C, cells, max_rounds=None):
    """Potentials complementary to a fixed support, by Bellman-Ford rounds.

    Looks for u, v with u_i + v_j <= C_ij everywhere and equality on the
    given cells, as shortest-path distances in the graph with arcs
    col j -> row i of length C_ij and row i -> col j of length -C_ij for
    support cells. Such potentials exist exactly when the support carries
    an optimal plan; a negative cycle (no convergence within n + m rounds)
    returns None.
    """
    n, m = C.shape
    ii, jj = np.array(cells, dtype=np.int64).reshape(-1, 2).T
    w = C[ii, jj]
    r = np.zeros(n)
    c = np.zeros(m)
    rounds = max_rounds or (n + m + 1)
    for _ in range(rounds):
        r_new = np.minimum(r, np.min(c[None, :] + C, axis=1))
        c_new = c.copy()
        np.minimum.at(c_new, jj, r_new[ii] - w)
        if np.array_equal(r_new, r) and np.array_equal(c_new, c):
            return r, -c
        r, c = r_new, c_new
    return None


def _transport_simplex(C, a, b, cells, flows, max_pivots, degenerate_run):
    tree = _TransportTree(C, cells, flows)
    n, m = C.shape
    tol = 1e-11 * (1.0 + float(np.max(np.abs(C))))
    flat_index = lambda cell: cell[0] * m + cell[1]
    rows_per_block = max(1, -(-16384 // m))
    starts = list(range(0, n, rows_per_block))
    block = 0
    degenerate = 0
    pivots = 0
    repair_at = degenerate_run
    while True:
        if degenerate >= repair_at:
            # long degenerate run: the plan may already be optimal while the
            # tree duals are not; try to certify it directly
            repair_at *= 4
            support = [cell for cell, q in tree.flow.items() if q > 0]
            found = _support_duals(C, support)
            if found is not None:
                u, v = found
                if np.min(C - u[:, None] - v[None, :]) >= -tol:
                    return tree, u, v, pivots
        u, v = tree.u, tree.v
        enter = None
        if degenerate >= degenerate_run:
            # Bland: first improving cell in row-major order
            for r0 in starts:
                rc = C[r0:r0 + rows_per_block] - u[r0:r0 + rows_per_block, None] - v[None, :]
                hits = np.flatnonzero(rc.ravel() < -tol)
                if hits.size:
                    enter = divmod(int(hits[0]) + r0 * m, m)
                    break
        else:
            # most negative reduced cost within the first block (cyclically) that has one
            for k in range(len(starts)):
                r0 = starts[(block + k) % len(starts)]
                rc = C[r0:r0 + rows_per_block] - u[r0:r0 + rows_per_block, None] - v[None, :]
                flat = int(np.argmin(rc))
                if rc.flat[flat] < -tol:
                    enter = divmod(flat + r0 * m, m)
                    block = (block + k) % len(starts)
                    break
        if enter is None:
            return tree, u.copy(), v.copy(), pivots
        if pivots >= max_pivots:
            raise SimplexError(f"transportation simplex stopped after {pivots} pivots",
                               basis=sorted(tree.flow), pivots=pivots)
        path = tree.cycle(*enter)
        theta = tree.pivot(enter, path, flat_index)
        pivots += 1
        degenerate = degenerate + 1 if theta == 0.0 else 0


@dataclass(frozen=True)
class ExactSolution:
    coupling: Coupling
    duals: DualPair
    v0: float
    pivots: int = 0
    info: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.coupling, self.duals, self.v0))


def _initial_basis(C, a, b, mu_minus, mu_plus):
    xs = getattr(mu_minus, "points", None)
    ys = getattr(mu_plus, "points", None)
    if xs is not None and ys is not None and xs.shape[1] == 1 and ys.shape[1] == 1:
        rows = np.argsort(xs[:, 0], kind="stable")
        up = np.argsort(ys[:, 0], kind="stable")
        best = None
        for name, cols in (("sorted-north-west", up), ("sorted-north-east", up[::-1].copy())):
            cells, flows = _staircase(a, b, rows, cols)
            ii, jj = np.array(cells).T
            cost = float(np.dot(C[ii, jj], flows))
            if best is None or cost < best[0]:
                best = (cost, name, cells, flows)
        return best[1], best[2], best[3]
    if C.size < 4096:
        return ("matrix-minimum",) + _least_cost_basis(C, a, b)
    # rank cells by the gap left by coarse entropic potentials; the greedy
    # allocation then starts next to the optimal support
    from .sinkhorn import SinkhornConfig, solve_sinkhorn

    spread = float(np.ptp(C)) or 1.0
    res = solve_sinkhorn(C, a, b, SinkhornConfig(epsilon=0.01 * spread, tol=1e-6 * float(b.max()),
                                                 max_iter=2000, eps_scaling=0.5))
    R = C - res.duals.phi[:, None] - res.duals.psi[None, :]
    return ("entropic-reduced matrix-minimum",) + _least_cost_basis(R, a, b)


def _is_symmetric(C, a, b):
    return C.shape[0] == C.shape[1] and np.array_equal(a, b) and np.array_equal(C, C.T)


def solve_exact(C, mu_minus, mu_plus, canonicalize: bool = True,
                max_pivots: int | None = None, degenerate_run: int = 50,
                symmetrize: bool | None = None) -> ExactSolution:
    """Optimal coupling and Kantorovich potentials of a discrete transport problem.

    Parameters
    ----------
    C : (n, m) array
        Cost matrix.
    mu_minus, mu_plus : DiscreteMeasure or array_like
        Source and target weights (positive, summing to one).
    canonicalize : bool
        Apply one c-conjugation pass to the simplex duals.
    symmetrize : bool, optional
        For symmetric problems (C == C.T, equal marginals) replace both
        potentials by (phi + psi) / 2 before canonicalizing. The average of
        an optimal pair and its transpose is again optimal, and this removes
        the arbitrary tilt that a degenerate basis puts on the potentials
        (for instance phi = -x, psi = x for the distance cost between
        identical measures). Defaults to doing so whenever the problem is
        symmetric.
    max_pivots : int, optional
        Pivot cap; defaults to ``50 * (n + m) + 1000``.
    degenerate_run : int
        After this many consecutive degenerate pivots the entering rule
        switches from most negative reduced cost to Bland's first-index rule
        until progress resumes.

    Returns
    -------
    ExactSolution
        Unpacks as ``(coupling, duals, v0)``. The duals are normalized so that
        ``sum(phi * a) == 0``.

    Notes
    -----
    Ties in the entering rule go to the smallest row-major index; ties in the
    ratio test go to the smallest row-major index among blocking cells. The
    initial basis is the cheaper of the two staircases (north-west corner
    rule on sorted supports, target in increasing or decreasing order) when
    both measures live on the real line. Otherwise it is the matrix-minimum
    rule, applied for larger problems to the reduced costs
    C - phi_eps (+) psi_eps of a coarse entropic solve, which only reorders
    the cells and leaves the optimal plans unchanged.
    """
    C = np.asarray(C, dtype=float)
    a, b = _weights(mu_minus), _weights(mu_plus)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost matrix {C.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginal weights must be positive")
    if abs(a.sum() - 1) > 1e-9 or abs(b.sum() - 1) > 1e-9:
        raise ValueError("marginal weights must sum to 1")
    n, m = C.shape
    if max_pivots is None:
        max_pivots = 50 * (n + m) + 1000
    start, cells, flows = _initial_basis(C, a, b, mu_minus, mu_plus)
    tree, u, v, pivots = _transport_simplex(C, a, b, cells, flows, max_pivots, degenerate_run)
    P = tree.matrix()
    coupling = Coupling(P, a, b)
    if symmetrize is None:
        symmetrize = _is_symmetric(C, a, b)
    if symmetrize:
        if not _is_symmetric(C, a, b):
            raise ValueError("symmetrize=True needs C == C.T and equal marginals")
        u = v = 0.5 * (u + v)
    duals = c_conjugate_pair(C, v) if canonicalize else DualPair(u, v)
    duals = normalize_duals(duals, a)
    v0 = coupling.cost(C)
    gap = abs(v0 - duals.value(a, b))
    if gap > 1e-8 * (1 + abs(v0)):
        raise SimplexError(f"duality gap {gap:.3e} after {pivots} pivots",
                           basis=sorted(tree.flow), pivots=pivots)
    info = {"initial_basis": start, "duality_gap": gap,
            "marginal_error": coupling.marginal_error()}
    return ExactSolution(coupling, duals, v0, pivots, info)


def brute_force_oracle(C) -> float:
    """Minimum of (1/n) sum_i C[i, sigma(i)] over all permutations sigma.

    With equal uniform marginals the optimal couplings include a scaled
    permutation matrix, so this enumerates the vertices of the Birkhoff
    polytope. Limited to n <= 7.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n:
        raise ValueError("brute_force_oracle needs a square cost matrix")
    if n > 7:
        raise ValueError(f"brute force over {n}! permutations is capped at n = 7")
    rows = np.arange(n)
    best = min(C[rows, list(sigma)].sum() for sigma in itertools.permutations(range(n)))
    return float(best / n)


def monotone_1d(mu_minus, mu_plus, c):
    """Quantile coupling of two measures on the real line.

    Optimal for costs c(x, y) = h(x - y) with h convex. The coupling is the
    north-west corner rule on the supports sorted increasingly.

    Returns
    -------
    coupling : Coupling
    v0 : float
    """
    if mu_minus.ambient_dim != 1 or mu_plus.ambient_dim != 1:
        raise ValueError("monotone_1d needs measures on the real line")
    if not getattr(c, "difference_convex", False):
        raise ValueError(f"monotone coupling is optimal only for convex functions of x - y; "
                         f"got {getattr(c, 'kind', c)!r}")
    a, b = mu_minus.weights, mu_plus.weights
    x, y = mu_minus.points[:, 0], mu_plus.points[:, 0]
    cells, flows = _staircase(a, b, np.argsort(x, kind="stable"), np.argsort(y, kind="stable"))
    P = np.zeros((a.size, b.size))
    rows, cols = np.array(cells).T
    np.add.at(P, (rows, cols), np.maximum(flows, 0.0))
    cost = c.value(x[rows, None], y[cols, None])
    return Coupling(P, a, b), float(np.sum(cost * P[rows, cols]))


def min_entropy_optimal_plan(C, mu_minus, mu_plus, tol: float = 1e-6,
                             eps_ladder=None, v0: float | None = None, sinkhorn_tol=1e-12):
    """Small-temperature limit of entropic plans.

    Runs Sinkhorn on a decreasing temperature ladder and stops once the plan
    entropy changes by at most ``tol`` between consecutive rungs and the
    plan cost is within ``tol`` of the transport cost.

    Raises
    ------
    LadderExhausted
        When the ladder ends first; ``trace`` lists (eps, entropy, cost).
    """
    from .sinkhorn import SinkhornConfig, solve_sinkhorn

    C = np.asarray(C, dtype=float)
    scale = max(float(np.ptp(C)), 1e-300)
    if eps_ladder is None:
        eps_ladder = scale * np.geomspace(0.1, 1e-4, 13)
    if v0 is None:
        v0 = solve_exact(C, mu_minus, mu_plus).v0
    trace = []
    warm = None
    previous = None
    for eps in eps_ladder:
        res = solve_sinkhorn(C, mu_minus, mu_plus,
                             SinkhornConfig(epsilon=float(eps), tol=sinkhorn_tol,
                                            max_iter=200000, warm_start=warm))
        warm = res.duals
        ent = res.entropy
        cost = res.plan.cost(C)
        trace.append((float(eps), ent, cost))
        if previous is not None and abs(ent - previous) <= tol and cost - v0 <= tol:
            return res.plan
        previous = ent
    raise LadderExhausted("plan entropy did not settle on the temperature ladder", trace)
