"""Covering numbers, separation, gauges and sparsity classes of point sets.

Supports are finite point sets, possibly with weights.  The dyadic set
``{1/2^k} u {0}`` and finite-level Cantor sets are materialized by
:class:`SupportSpec`.  A covering at radius ``eps`` is computed exactly in
one dimension (left-to-right sweep, which is optimal for intervals) and by
farthest-point greedy otherwise; the gauge at ``eps`` is the smallest
weight captured by a ball of that covering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySupport, InvalidParameter
from .transport import BoundedDomain

__all__ = [
    "SupportSpec",
    "Covering",
    "SparsityProfile",
    "SparsityClass",
    "covering",
    "covering_count",
    "center_covering",
    "separation_check",
    "gauge_estimate",
    "sparsity_profile",
    "classify_sparsity",
    "box_covering_number",
    "box_packing_number",
    "valid_separation_scale",
]

TOL = 1e-12


@dataclass(frozen=True)
class SupportSpec:
    """Finite support, optionally weighted.

    Use the constructors :meth:`explicit`, :meth:`dyadic` and :meth:`cantor`.
    """

    kind: str
    points: np.ndarray = field(repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.size == 0:
            raise EmptySupport("support has no points")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(pts),) or np.any(w < 0):
                raise InvalidParameter("weights must be nonnegative, one per point")
            object.__setattr__(self, "weights", w / w.sum())

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def explicit(cls, points, weights=None) -> SupportSpec:
        return cls("explicit", np.asarray(points, float), weights)

    @classmethod
    def dyadic(cls, levels: int = 200, gamma1: float | None = None) -> SupportSpec:
        """``{1/2^k : k = 1..levels} u {0}``.

        With ``gamma1`` the atom ``1/2^k`` gets weight proportional to
        ``k^-gamma1`` and the limit point 0 gets none.
        """
        k = np.arange(1, levels + 1)
        pts = np.concatenate([0.5**k, [0.0]])
        w = None
        if gamma1 is not None:
            w = np.concatenate([k ** (-float(gamma1)), [0.0]])
        return cls("dyadic", pts, w, {"levels": levels, "gamma1": gamma1})

    @classmethod
    def cantor(cls, level: int = 10, weighted: bool = True) -> SupportSpec:
        """Left endpoints of the ``2^level`` intervals of the middle-thirds set.

        Weights are uniform (the natural Hausdorff measure at this level).
        Distances below ``3^-level`` are not resolved by this truncation.
        """
        pts = np.array([0.0])
        for j in range(1, level + 1):
            pts = np.concatenate([pts, pts + 2.0 * 3.0**-j])
        pts.sort()
        w = np.full(len(pts), 1.0 / len(pts)) if weighted else None
        return cls("cantor", pts, w, {"level": level})

    @classmethod
    def from_json(cls, obj: dict) -> SupportSpec:
        kind = obj.get("kind", "explicit")
        if kind == "cantor":
            return cls.cantor(int(obj.get("level", 10)), bool(obj.get("weighted", True)))
        if kind == "dyadic":
            return cls.dyadic(int(obj.get("levels", 200)), obj.get("gamma1"))
        return cls.explicit(obj["points"], obj.get("weights"))

    def to_json(self) -> dict:
        if self.kind == "explicit":
            out = {"kind": "explicit", "points": self.points.tolist()}
            if self.weights is not None:
                out["weights"] = self.weights.tolist()
            return out
        return {"kind": self.kind, **self.params}


@dataclass(frozen=True)
class Covering:
    """Ball centers and the index of the ball assigned to each point."""

    eps: float
    centers: np.ndarray
    assignment: np.ndarray

    @property
    def count(self) -> int:
        return len(self.centers)


def _sweep_1d(x: np.ndarray, eps: float) -> Covering:
    order = np.argsort(x, kind="stable")
    xs = x[order]
    centers = []
    assign_sorted = np.empty(len(xs), dtype=int)
    i = 0
    while i < len(xs):
        left = xs[i]
        reach = left + 2.0 * eps + TOL * max(1.0, abs(left))
        j = int(np.searchsorted(xs, reach, side="right"))
        centers.append(left + eps)
        assign_sorted[i:j] = len(centers) - 1
        i = j
    assignment = np.empty_like(assign_sorted)
    assignment[order] = assign_sorted
    return Covering(eps, np.array(centers)[:, None], assignment)


def _farthest_point(P: np.ndarray, eps: float) -> Covering:
    centers = [0]
    d = np.linalg.norm(P - P[0], axis=1)
    owner = np.zeros(len(P), dtype=int)
    while d.max() > eps * (1 + TOL):
        nxt = int(np.argmax(d))
        centers.append(nxt)
        dn = np.linalg.norm(P - P[nxt], axis=1)
        closer = dn < d
        owner[closer] = len(centers) - 1
        d = np.minimum(d, dn)
    return Covering(eps, P[centers], owner)


def covering(S: SupportSpec, eps: float) -> Covering:
    """Closed-ball covering of the support at radius ``eps``.

    In one dimension the sweep that opens a ball ``[x, x + 2 eps]`` at the
    leftmost uncovered point is optimal.  In higher dimensions farthest-point
    greedy with data-point centers is used; its centers are more than
    ``eps`` apart, so its count is at most the packing number at ``eps/2``.
    """
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if S.points.size == 0:
        raise EmptySupport("support has no points")
    if S.dim == 1:
        return _sweep_1d(S.points[:, 0], eps)
    return _farthest_point(S.points, eps)


def covering_count(S: SupportSpec, eps: float) -> int:
    """Number of closed ``eps``-balls used by :func:`covering`."""
    return covering(S, eps).count


def _data_centered_1d(x: np.ndarray, eps: float) -> Covering:
    """Fewest ``eps``-balls centered at data points (greedy, optimal in 1-D)."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    slack = TOL * max(1.0, float(np.abs(xs).max()))
    centers = []
    assign_sorted = np.empty(len(xs), dtype=int)
    i = 0
    while i < len(xs):
        c = xs[int(np.searchsorted(xs, xs[i] + eps + slack, side="right")) - 1]
        j = int(np.searchsorted(xs, c + eps + slack, side="right"))
        centers.append(c)
        assign_sorted[i:j] = len(centers) - 1
        i = j
    assignment = np.empty_like(assign_sorted)
    assignment[order] = assign_sorted
    return Covering(eps, np.array(centers)[:, None], assignment)


def center_covering(S: SupportSpec, eps: float) -> Covering:
    """Covering by ``eps``-balls whose centers are support points."""
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if S.dim == 1:
        return _data_centered_1d(S.points[:, 0], eps)
    return _farthest_point(S.points, eps)


def separation_check(S: SupportSpec, eps: float, c2: float, cov: Covering | None = None) -> bool:
    """Whether all covering centers are at least ``c2 * eps`` apart.

    Without ``cov`` the balls are centered at support points
    (:func:`center_covering`), so two atoms closer than ``c2 * eps`` but
    farther than ``eps`` always count as a violation.
    """
    cov = cov or center_covering(S, eps)
    C = cov.centers
    if len(C) < 2:
        return True
    D = np.sqrt(((C[:, None, :] - C[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(D, np.inf)
    return bool(D.min() >= c2 * eps * (1 - 1e-9))


def valid_separation_scale(S: SupportSpec, delta: float, c1: float, c2: float, n_grid: int = 64):
    """Smallest ``eps`` in ``(c1 delta, delta)`` whose covering is ``c2``-separated.

    Returns ``None`` when no grid point qualifies.
    """
    for eps in np.geomspace(c1 * delta, delta, n_grid + 2)[1:-1]:
        if separation_check(S, float(eps), c2):
            return float(eps)
    return None


def gauge_estimate(S: SupportSpec, eps: float, cov: Covering | None = None) -> float:
    """Smallest weight captured by a ball of the covering at ``eps``."""
    if S.weights is None:
        raise InvalidParameter("gauge needs a weighted support")
    cov = cov or covering(S, eps)
    mass = np.bincount(cov.assignment, weights=S.weights, minlength=cov.count)
    return float(mass.min())


# ---------------------------------------------------------------------------
# Profiles and classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparsityClass:
    kind: str
    gamma0: float
    gamma1: float
    fit_r2: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SparsityProfile:
    eps_grid: np.ndarray
    K_vals: np.ndarray
    g_vals: np.ndarray
    K_envelope: np.ndarray
    classification: SparsityClass | None = None

    @property
    def fit_r2(self) -> float:
        return float("nan") if self.classification is None else self.classification.fit_r2

    def to_json(self) -> dict:
        out = {
            "eps_grid": self.eps_grid.tolist(),
            "K_vals": self.K_vals.tolist(),
            "g_vals": self.g_vals.tolist(),
            "K_envelope": self.K_envelope.tolist(),
        }
        if self.classification is not None:
            c = self.classification
            out["classification"] = {"kind": c.kind, "gamma0": c.gamma0, "gamma1": c.gamma1, "fit_r2": c.fit_r2}
        return out


def sparsity_profile(S: SupportSpec, eps_grid) -> SparsityProfile:
    """Covering counts and gauges along a decreasing ``eps`` grid.

    The stored envelope of ``K`` is nonincreasing in ``eps``; gauges are made
    nondecreasing in ``eps`` by a running minimum from the large end.
    """
    eps = np.sort(np.asarray(eps_grid, float))[::-1]
    K = np.empty(len(eps), dtype=int)
    g = np.full(len(eps), np.nan)
    for i, e in enumerate(eps):
        cov = covering(S, float(e))
        K[i] = cov.count
        if S.weights is not None:
            g[i] = gauge_estimate(S, float(e), cov)
    env = np.maximum.accumulate(K)
    if S.weights is not None:
        g = np.minimum.accumulate(g)
    prof = SparsityProfile(eps, K, g, env)
    return prof


def _r2(x, y):
    if np.ptp(y) == 0:
        return 0.0, 1.0
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(1.0 - resid @ resid / np.sum((y - y.mean()) ** 2))


def classify_sparsity(profile: SparsityProfile, r2_min: float = 0.9) -> SparsityClass:
    """Supersparse or ordinary sparse, with exponents ``(gamma0, gamma1)``.

    supersparse
        ``K(eps) ~ log(1/eps)^gamma0`` and ``g(eps) ~ log(1/eps)^-gamma1``.
    ordinary
        ``K(eps) ~ eps^-gamma0`` and ``g(eps) ~ eps^gamma1``.

    The class with the larger mean R^2 over the two fits wins; below
    ``r2_min`` the result is ``unclassified``.  A bounded ``K`` (finite
    support) is ordinary with ``gamma0 = 0``.
    """
    eps = profile.eps_grid
    if len(eps) < 6 or eps.max() / eps.min() < 100:
        raise InvalidParameter("need at least 6 grid points spanning two decades")
    logK = np.log(profile.K_envelope.astype(float))
    L = np.log(1.0 / eps)
    has_g = np.all(np.isfinite(profile.g_vals)) and np.all(profile.g_vals > 0)
    logg = np.log(profile.g_vals) if has_g else None

    s0_sup, r_sup = _r2(np.log(L), logK)
    s0_ord, r_ord = _r2(L, logK)
    diag = {"r2_K_supersparse": r_sup, "r2_K_ordinary": r_ord}
    if has_g:
        s1_sup, rg_sup = _r2(np.log(L), logg)
        s1_ord, rg_ord = _r2(np.log(eps), logg)
        diag.update(r2_g_supersparse=rg_sup, r2_g_ordinary=rg_ord)
        joint_sup, joint_ord = 0.5 * (r_sup + rg_sup), 0.5 * (r_ord + rg_ord)
        g1_sup, g1_ord = -s1_sup, s1_ord
    else:
        joint_sup, joint_ord = r_sup, r_ord
        g1_sup = g1_ord = float("nan")
    if np.ptp(logK) == 0:
        return SparsityClass("ordinary", 0.0, g1_ord, 1.0, diag)
    if max(joint_sup, joint_ord) < r2_min:
        return SparsityClass("unclassified", float("nan"), float("nan"), max(joint_sup, joint_ord), diag)
    if joint_sup > joint_ord:
        return SparsityClass("supersparse", s0_sup, g1_sup, joint_sup, diag)
    return SparsityClass("ordinary", s0_ord, g1_ord, joint_ord, diag)


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------


def box_covering_number(domain: BoundedDomain, eps: float) -> int:
    """Closed-ball covering count of a box from a cubic grid.

    A cube of side ``2 eps / sqrt(d)`` has diameter ``2 eps``, so a grid of
    such cubes yields ``prod_i ceil(side_i / (2 eps / sqrt(d)))`` balls.  A
    single ball suffices once ``eps`` reaches half the box diameter.
    """
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if eps >= domain.diameter / 2:
        return 1
    side = 2.0 * eps / math.sqrt(domain.dim)
    return int(np.prod(np.ceil((domain.hi - domain.lo) / side - 1e-12)))


def box_packing_number(domain: BoundedDomain, eps: float) -> int:
    """Points of a grid packing with pairwise distances strictly above ``eps``.

    Along each axis of length ``s`` at most ``ceil(s / eps)`` points fit with
    gaps larger than ``eps``; the product grid keeps that separation.
    """
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    sides = domain.hi - domain.lo
    return int(np.prod(np.maximum(np.ceil(sides / eps - 1e-12), 1)))
