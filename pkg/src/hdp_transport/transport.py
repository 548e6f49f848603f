"""Exact L_r Wasserstein distances between finite discrete measures.

The solver is a transportation simplex (network simplex specialised to the
complete bipartite graph) started from a north-west-corner basis.  In one
dimension the sorted monotone coupling is optimal for every convex cost, so
``d = 1`` problems skip the pivoting entirely.  Batched one-dimensional
distances are available through :func:`wasserstein_1d_batch` for Monte Carlo
loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DomainMismatch, InvalidCoupling, InvalidMeasure, InvalidParameter, NumericalFailure

__all__ = [
    "BoundedDomain",
    "DiscreteMeasure",
    "Coupling",
    "TransportResult",
    "CouplingReport",
    "wasserstein",
    "coupling_cost",
    "validate_coupling",
    "solve_transport",
    "wasserstein_1d_batch",
    "cost_matrix",
]

WEIGHT_FLOOR = 1e-15
SUM_TOL = 1e-12
MARGINAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# Domain and measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundedDomain:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        hi = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or len(lo) == 0:
            raise InvalidParameter("lower and upper must have the same positive length")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise InvalidParameter("box bounds must be finite")
        if not all(a < b for a, b in zip(lo, hi)):
            raise InvalidParameter("need lower[i] < upper[i] for every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int = 1) -> BoundedDomain:
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lo, self.hi)

    def to_json(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_json(cls, obj: dict) -> BoundedDomain:
        return cls(tuple(obj["lower"]), tuple(obj["upper"]))


class DiscreteMeasure:
    """Finite atomic probability measure on a :class:`BoundedDomain`.

    On construction, atoms lighter than ``1e-15`` are dropped, atoms sharing
    a location are merged and the weights are renormalised.  Instances are
    immutable: the underlying arrays are flagged read-only.

    Parameters
    ----------
    domain : BoundedDomain
    locations : array_like, shape (k, d) or (k,) when d = 1
    weights : array_like, shape (k,)
        Must be nonnegative and sum to one within ``1e-12``.
    """

    __slots__ = ("domain", "locations", "weights")

    def __init__(self, domain: BoundedDomain, locations, weights, *, _trusted: bool = False):
        locs = np.asarray(locations, dtype=float)
        w = np.asarray(weights, dtype=float).ravel()
        if locs.ndim == 1:
            locs = locs.reshape(-1, domain.dim) if domain.dim > 1 else locs[:, None]
        if not _trusted:
            locs, w = _canonical_atoms(domain, locs, w)
        locs.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    @classmethod
    def from_masses(cls, domain: BoundedDomain, locations, masses) -> DiscreteMeasure:
        """Build a measure from nonnegative masses that need not sum to one."""
        m = np.asarray(masses, dtype=float).ravel()
        if np.any(~np.isfinite(m)) or np.any(m < 0) or m.sum() <= 0:
            raise InvalidMeasure("masses must be finite, nonnegative and not all zero")
        return cls(domain, locations, m / m.sum())

    @classmethod
    def dirac(cls, domain: BoundedDomain, location) -> DiscreteMeasure:
        return cls(domain, np.reshape(np.asarray(location, float), (1, domain.dim)), [1.0])

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"DiscreteMeasure(k={self.size}, d={self.dim})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.locations.shape == other.locations.shape
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def mean(self) -> np.ndarray:
        return self.weights @ self.locations

    def mass_in_box(self, lower, upper) -> float:
        """Mass of the half-open box ``[lower, upper)``."""
        inside = np.all((self.locations >= lower) & (self.locations < upper), axis=1)
        return float(self.weights[inside].sum())

    def to_json(self) -> dict:
        return {
            "domain": self.domain.to_json(),
            "atoms": [{"loc": [float(x) for x in loc], "w": float(w)} for loc, w in zip(self.locations, self.weights)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> DiscreteMeasure:
        domain = BoundedDomain.from_json(obj["domain"])
        atoms = obj["atoms"]
        if not atoms:
            raise InvalidMeasure("a measure needs at least one atom")
        locs = np.array([a["loc"] for a in atoms], dtype=float).reshape(len(atoms), domain.dim)
        w = np.array([a["w"] for a in atoms], dtype=float)
        return cls(domain, locs, w)


def _canonical_atoms(domain: BoundedDomain, locs: np.ndarray, w: np.ndarray):
    if locs.ndim != 2 or locs.shape[1] != domain.dim:
        raise InvalidMeasure(f"locations must have shape (k, {domain.dim})")
    if locs.shape[0] != w.shape[0]:
        raise InvalidMeasure("locations and weights disagree in length")
    if locs.shape[0] == 0:
        raise InvalidMeasure("a measure needs at least one atom")
    if not np.all(np.isfinite(locs)) or not np.all(np.isfinite(w)):
        raise InvalidMeasure("non-finite coordinates or weights")
    if np.any(w < 0):
        raise InvalidMeasure("negative weight")
    if not np.all(domain.contains(locs)):
        raise InvalidMeasure("atom outside the domain box")
    if abs(w.sum() - 1.0) > SUM_TOL + WEIGHT_FLOOR * len(w):
        raise InvalidMeasure(f"weights sum to {w.sum()!r}, not 1")
    keep = w >= WEIGHT_FLOOR
    if not np.any(keep):
        raise InvalidMeasure("all weights below the drop threshold")
    locs, w = domain.clip(locs[keep]), w[keep]
    uniq, inverse = np.unique(locs, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse.ravel(), w)
    return np.ascontiguousarray(uniq), merged / merged.sum()


# ---------------------------------------------------------------------------
# Couplings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Coupling:
    """Joint weight matrix between the atoms of ``source`` and ``target``."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = np.array(self.weights, dtype=float)
        k.setflags(write=False)
        object.__setattr__(self, "weights", k)

    def to_json(self) -> dict:
        return {
            "source": self.source.to_json(),
            "target": self.target.to_json(),
            "weights": self.weights.tolist(),
        }


@dataclass(frozen=True)
class TransportResult:
    order: float
    distance: float
    coupling: Coupling

    def to_json(self) -> dict:
        return {"order": self.order, "distance": self.distance, "coupling": self.coupling.to_json()}


@dataclass(frozen=True)
class CouplingReport:
    row_violation: float
    col_violation: float
    min_entry: float

    @property
    def ok(self) -> bool:
        return max(self.row_violation, self.col_violation) <= MARGINAL_TOL and self.min_entry >= 0


def cost_matrix(x: np.ndarray, y: np.ndarray, r: float) -> np.ndarray:
    """Matrix of ``||x_i - y_j||^r`` (Euclidean)."""
    diff = x[:, None, :] - y[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return dist if r == 1 else dist**r


def validate_coupling(kappa: Coupling) -> CouplingReport:
    """Report the largest marginal violations and the smallest entry."""
    w = kappa.weights
    a, b = kappa.source.weights, kappa.target.weights
    if w.shape != (len(a), len(b)):
        return CouplingReport(np.inf, np.inf, float(np.min(w)) if w.size else 0.0)
    return CouplingReport(
        row_violation=float(np.max(np.abs(w.sum(axis=1) - a))),
        col_violation=float(np.max(np.abs(w.sum(axis=0) - b))),
        min_entry=float(np.min(w)),
    )


def coupling_cost(kappa: Coupling, r: float) -> float:
    """Return ``(sum_ij kappa_ij ||theta_i - theta'_j||^r)^(1/r)``."""
    if r < 1:
        raise InvalidParameter("order r must be >= 1")
    rep = validate_coupling(kappa)
    if not rep.ok:
        raise InvalidCoupling(f"coupling violates its invariants: {rep}")
    c = cost_matrix(kappa.source.locations, kappa.target.locations, r)
    total = max(float(np.sum(kappa.weights * c)), 0.0)
    return total ** (1.0 / r)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """North-west-corner basic feasible solution as a spanning tree."""
    m, n = len(a), len(b)
    flow = np.zeros((m, n))
    basis = []
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        flow[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(m: int, n: int, basis, C: np.ndarray):
    """Dual potentials u, v with u_i + v_j = C_ij on the basic cells."""
    adj: list[list[int]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    parent = np.full(m + n, -1)
    pot[0] = 0.0
    order = [0]
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    for node in order:
        for nb in adj[node]:
            if not seen[nb]:
                seen[nb] = True
                parent[nb] = node
                if node < m:
                    pot[nb] = C[node, nb - m] - pot[node]
                else:
                    pot[nb] = C[nb, node - m] - pot[node]
                order.append(nb)
    if not seen.all():
        raise NumericalFailure("basis is not a spanning tree")
    return pot[:m], pot[m:], parent


def _tree_path(parent: np.ndarray, start: int, goal: int) -> list[int]:
    """Node path from ``start`` to ``goal`` in the tree rooted at node 0."""
    anc_start = [start]
    while parent[anc_start[-1]] != -1:
        anc_start.append(parent[anc_start[-1]])
    anc_goal = [goal]
    while parent[anc_goal[-1]] != -1:
        anc_goal.append(parent[anc_goal[-1]])
    common = set(anc_start) & set(anc_goal)
    up = []
    for node in anc_start:
        up.append(node)
        if node in common:
            lca = node
            break
    down = []
    for node in anc_goal:
        if node == lca:
            break
        down.append(node)
    return up + down[::-1]


def solve_transport(a: np.ndarray, b: np.ndarray, C: np.ndarray, max_iter: int | None = None):
    """Exact optimal transport plan for supplies ``a``, demands ``b``, cost ``C``.

    Returns ``(plan, cost)``.  Uses the transportation simplex with Dantzig
    pricing and switches to Bland's rule after a run of degenerate pivots.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if m == 1 or n == 1:
        # a single supply or demand node admits only the product plan
        plan = np.outer(a, b) / max(a.sum(), b.sum())
        return plan, float(np.sum(plan * C))
    flow, basis = _northwest_corner(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for i, j in basis:
        in_basis[i, j] = True
    tol = 1e-13 * max(1.0, float(np.max(np.abs(C))))
    max_iter = max_iter or 50 * (m + n) * max(m, n) + 1000
    degenerate_run = 0
    for _ in range(max_iter):
        u, v, parent = _potentials(m, n, basis, C)
        red = C - u[:, None] - v[None, :]
        red[in_basis] = 0.0
        if degenerate_run > m + n:
            cand = np.flatnonzero(red.ravel() < -tol)
            if cand.size == 0:
                break
            p, q = divmod(int(cand[0]), n)
        else:
            idx = int(np.argmin(red))
            if red.flat[idx] >= -tol:
                break
            p, q = divmod(idx, n)
        # cycle: entering cell (p, q), then tree path column q -> row p
        path = _tree_path(parent, m + q, p)
        cells = []
        for s in range(len(path) - 1):
            x, y = path[s], path[s + 1]
            cells.append((x, y - m) if x < m else (y, x - m))
        minus = cells[0::2]
        theta_vals = [flow[c] for c in minus]
        theta = min(theta_vals)
        leave = minus[theta_vals.index(theta)]
        if theta > 0:
            degenerate_run = 0
            for s, c in enumerate(cells):
                flow[c] += -theta if s % 2 == 0 else theta
            flow[p, q] = theta
            flow[leave] = 0.0
        else:
            degenerate_run += 1
        basis[basis.index(leave)] = (p, q)
        in_basis[leave] = False
        in_basis[p, q] = True
    else:
        raise NumericalFailure("transportation simplex did not converge")
    np.maximum(flow, 0.0, out=flow)
    return flow, float(np.sum(flow * C))


def _monotone_plan_1d(x: np.ndarray, a: np.ndarray, y: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sorted north-west-corner coupling, optimal for convex costs on R."""
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    flow, _ = _northwest_corner(a[ix], b[iy])
    plan = np.zeros_like(flow)
    plan[np.ix_(ix, iy)] = flow
    return plan


def wasserstein(G: DiscreteMeasure, Gp: DiscreteMeasure, r: float = 1.0) -> TransportResult:
    """Exact L_r Wasserstein distance with Euclidean ground cost.

    Parameters
    ----------
    G, Gp : DiscreteMeasure
        Measures on the same domain.
    r : float
        Order, ``r >= 1``.

    Returns
    -------
    TransportResult
        ``distance ** r`` equals the cost of ``coupling``.
    """
    if r < 1 or not np.isfinite(r):
        raise InvalidParameter("order r must be a finite real >= 1")
    if G.domain != Gp.domain:
        raise DomainMismatch("measures live on different domains")
    C = cost_matrix(G.locations, Gp.locations, r)
    if G.dim == 1:
        plan = _monotone_plan_1d(G.locations[:, 0], G.weights, Gp.locations[:, 0], Gp.weights)
        cost = float(np.sum(plan * C))
    else:
        plan, cost = solve_transport(G.weights, Gp.weights, C)
    cost = max(cost, 0.0)
    return TransportResult(float(r), cost ** (1.0 / r), Coupling(G, Gp, plan))


def wasserstein_1d_batch(x, a, y, b, r: float = 1.0) -> np.ndarray:
    """Row-wise W_r between one-dimensional discrete measures.

    Parameters
    ----------
    x, a : ndarray, shape (N, k) or (k,)
        Locations and weights of the first measures (broadcast over rows).
    y, b : ndarray, shape (N, l) or (l,)
        Locations and weights of the second measures.

    Returns
    -------
    ndarray, shape (N,)
        Exact distances computed from the quantile representation
        ``W_r^r = int_0^1 |F^-1(u) - G^-1(u)|^r du``.
    """
    x, a, y, b = (np.atleast_2d(np.asarray(z, dtype=float)) for z in (x, a, y, b))
    N = max(len(x), len(a), len(y), len(b))
    x, a = np.broadcast_to(x, (N, x.shape[1])), np.broadcast_to(a, (N, a.shape[1]))
    y, b = np.broadcast_to(y, (N, y.shape[1])), np.broadcast_to(b, (N, b.shape[1]))
    ox, oy = np.argsort(x, axis=1), np.argsort(y, axis=1)
    xs, ys = np.take_along_axis(x, ox, 1), np.take_along_axis(y, oy, 1)
    ca = np.cumsum(np.take_along_axis(a, ox, 1), axis=1)
    cb = np.cumsum(np.take_along_axis(b, oy, 1), axis=1)
    ca /= ca[:, -1:]
    cb /= cb[:, -1:]
    grid = np.sort(np.concatenate([np.zeros((N, 1)), ca, cb], axis=1), axis=1)
    grid[:, -1] = 1.0
    du = np.diff(grid, axis=1)
    mid = 0.5 * (grid[:, 1:] + grid[:, :-1])
    # per-row searchsorted through a shared offset
    rows = np.arange(N)[:, None] * 2.0
    ia = np.searchsorted((ca + rows).ravel(), (mid + rows).ravel()).reshape(mid.shape) - np.arange(N)[:, None] * ca.shape[1]
    ib = np.searchsorted((cb + rows).ravel(), (mid + rows).ravel()).reshape(mid.shape) - np.arange(N)[:, None] * cb.shape[1]
    ia = np.clip(ia, 0, ca.shape[1] - 1)
    ib = np.clip(ib, 0, cb.shape[1] - 1)
    qa = np.take_along_axis(xs, ia, 1)
    qb = np.take_along_axis(ys, ib, 1)
    return np.sum(du * np.abs(qa - qb) ** r, axis=1) ** (1.0 / r)


def measure_from_any(obj: Any) -> DiscreteMeasure:
    """Accept a :class:`DiscreteMeasure` or its JSON object."""
    if isinstance(obj, DiscreteMeasure):
        return obj
    return DiscreteMeasure.from_json(obj)
