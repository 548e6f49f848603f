"""Density-ratio test sets on the simplex and their tube measures.

For two Dirichlet laws ``D = Dir(alpha beta)`` and ``D' = Dir(alpha' beta')``
on a shared atom set, the region where the ``D'`` density exceeds the ``D``
density is

    B = { q : sum_i Delta_i log q_i < c },   Delta_i = alpha beta_i - alpha' beta'_i,

with ``c = log Gamma(alpha') - log Gamma(alpha)
+ sum_i [log Gamma(alpha beta_i) - log Gamma(alpha' beta'_i)]``.  Its
``D' - D`` mass is the total variation between the two laws.

The tube ``B_delta \\ B`` collects points outside ``B`` within W_r distance
``delta`` of it.  Since ``W_r(Q, Q')^r >= m^r ||q - q'||_inf`` for measures on
atoms with minimum separation ``m``, the ell-infinity box of radius
``(delta / m)^r`` contains the W_r ball; :func:`tube_measure` decides exactly
whether that box meets ``B`` (the ``linf`` surrogate).  A cheaper ``line``
surrogate walks from ``q`` along the projected gradient to the boundary and
measures the exact W_r length of that step.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import (
    DegenerateDirichlet,
    InsufficientSignal,
    InvalidParameter,
    SupportMismatch,
    SupportsOverlap,
)
from .hierarchy import batch_wasserstein
from .random_measures import log_dirichlet
from .rng import stream
from .transport import DiscreteMeasure, wasserstein

__all__ = [
    "SimplexTestSet",
    "TubeEstimate",
    "RegularityFit",
    "GapEstimate",
    "build_test_set",
    "test_set_from_params",
    "variational_gap",
    "tube_measure",
    "regularity_exponent_fit",
    "disjoint_support_test",
    "disjoint_gap_lower_bound",
    "min_separation",
    "margin_constant",
    "sparse_tube_report",
    "DisjointGap",
]

CHUNK = 200_000


# ---------------------------------------------------------------------------
# Test sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimplexTestSet:
    """``B = {q : sum_i deltas_i log q_i < threshold}`` on the simplex.

    ``orientation`` is ``"below"``: ``B`` is the strict sublevel set, which is
    exactly where the ``D'`` density is larger.
    """

    atoms: np.ndarray = field(repr=False)
    deltas: np.ndarray
    threshold: float
    params: np.ndarray
    params_p: np.ndarray
    orientation: str = "below"
    degenerate: bool = False

    @property
    def k(self) -> int:
        return len(self.deltas)

    def level(self, logq: np.ndarray) -> np.ndarray:
        """``sum_i Delta_i log q_i - c``; negative exactly on ``B``."""
        logq = np.asarray(logq, dtype=float)
        with np.errstate(invalid="ignore"):
            terms = np.where(self.deltas == 0, 0.0, self.deltas * logq)
        return terms.sum(axis=-1) - self.threshold

    def contains_log(self, logq: np.ndarray) -> np.ndarray:
        return self.level(logq) < 0

    def contains(self, q: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.contains_log(np.log(np.asarray(q, dtype=float)))

    def log_density_ratio(self, logq: np.ndarray) -> np.ndarray:
        """``log p_{D'}(q) - log p_D(q)``, equal to ``-level(logq)``."""
        return -self.level(logq)

    def to_json(self) -> dict:
        return {
            "atoms": self.atoms.tolist(),
            "deltas": self.deltas.tolist(),
            "threshold": self.threshold,
            "orientation": self.orientation,
            "degenerate": self.degenerate,
        }


def test_set_from_params(atoms, params, params_p) -> SimplexTestSet:
    """Test set for ``Dir(params)`` versus ``Dir(params_p)`` on ``atoms``."""
    a = np.asarray(params, dtype=float)
    ap = np.asarray(params_p, dtype=float)
    if a.shape != ap.shape or a.ndim != 1:
        raise SupportMismatch("parameter vectors differ in length")
    if len(a) < 2:
        raise InvalidParameter("a test set needs k >= 2 atoms")
    if np.any(a <= 0) or np.any(ap <= 0):
        raise DegenerateDirichlet("Dirichlet parameters must be strictly positive")
    deltas = a - ap
    c = float(gammaln(ap.sum()) - gammaln(a.sum()) + np.sum(gammaln(a) - gammaln(ap)))
    degenerate = bool(np.all(deltas == 0))
    return SimplexTestSet(np.asarray(atoms, float), deltas, c, a, ap, "below", degenerate)


def build_test_set(G: DiscreteMeasure, Gp: DiscreteMeasure, alpha: float, alphap: float) -> SimplexTestSet:
    """Test set discriminating ``D_alpha G`` from ``D_alpha' G'`` on shared atoms."""
    if G.domain != Gp.domain or G.locations.shape != Gp.locations.shape or not np.array_equal(G.locations, Gp.locations):
        raise SupportMismatch("G and G' must have identical atom locations")
    if alpha <= 0 or alphap <= 0:
        raise InvalidParameter("concentrations must be positive")
    return test_set_from_params(G.locations, alpha * G.weights, alphap * Gp.weights)


def min_separation(atoms: np.ndarray) -> float:
    X = np.asarray(atoms, float)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(D, np.inf)
    return float(D.min())


# ---------------------------------------------------------------------------
# Variational gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    stderr: float
    n_mc: int
    mass_p: float = float("nan")
    mass: float = float("nan")


def variational_gap(ts: SimplexTestSet, G=None, Gp=None, alpha=None, alphap=None, n_mc: int = 100_000, seed: int = 0) -> GapEstimate:
    """Monte Carlo ``D'(B) - D(B)``, the total variation between the laws.

    ``G``, ``Gp``, ``alpha`` and ``alphap`` are accepted for symmetry with
    :func:`build_test_set`; the Dirichlet parameters stored on ``ts`` are used.
    """
    if ts.degenerate:
        return GapEstimate(0.0, 0.0, int(n_mc), 0.0, 0.0)
    hits = np.zeros(2)
    for s, params in enumerate((ts.params_p, ts.params)):
        rng = stream(seed, "gap", s)
        done = 0
        while done < n_mc:
            b = min(CHUNK, n_mc - done)
            hits[s] += ts.contains_log(log_dirichlet(params, b, rng)).sum()
            done += b
    pp, p = hits / n_mc
    se = math.sqrt((pp * (1 - pp) + p * (1 - p)) / n_mc)
    return GapEstimate(float(pp - p), se, int(n_mc), float(pp), float(p))


# ---------------------------------------------------------------------------
# Tube measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TubeEstimate:
    delta: float
    measure: float
    stderr: float
    n_mc: int
    surrogate: str = "linf"

    def row(self) -> dict:
        return {"delta": self.delta, "estimate": self.measure, "stderr": self.stderr, "n_mc": self.n_mc, "surrogate": self.surrogate}


def _safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(x, 0.0))


def _box_min_level(ts: SimplexTestSet, q: np.ndarray, rho: float) -> np.ndarray:
    """Exact minimum of the level function over ``{x in simplex : |x - q|_inf <= rho}``.

    Coordinates with ``Delta_i > 0`` want to shrink (concave terms) and those
    with ``Delta_i < 0`` want to grow (convex terms); ``Delta_i = 0``
    coordinates are free slack.  If the slack cannot balance the total mass,
    either the convex coordinates are lowered (water-filling) or the concave
    ones raised, in which case the minimum sits at a vertex with at most one
    coordinate strictly between its bounds.
    """
    D = ts.deltas
    P, N, Z = np.flatnonzero(D > 0), np.flatnonzero(D < 0), np.flatnonzero(D == 0)
    lo = np.maximum(q - rho, 0.0)
    hi = np.minimum(q + rho, 1.0)
    base = lo[:, P].sum(1) + hi[:, N].sum(1)
    s_lo = base + lo[:, Z].sum(1)
    s_hi = base + hi[:, Z].sum(1)

    def level_of(xP, xN):
        v = np.zeros(len(xP))
        if len(P):
            v = v + (D[P] * _safe_log(xP)).sum(1)
        if len(N):
            with np.errstate(invalid="ignore"):
                v = v + (D[N] * _safe_log(xN)).sum(1)
        return v - ts.threshold

    out = level_of(lo[:, P], hi[:, N])
    # excess mass: lower the convex coordinates by water-filling
    excess = s_lo > 1.0
    if np.any(excess) and len(N):
        idx = np.flatnonzero(excess)
        aN, bN = lo[np.ix_(idx, N)], hi[np.ix_(idx, N)]
        target = 1.0 - lo[np.ix_(idx, P)].sum(1) - lo[np.ix_(idx, Z)].sum(1)
        w = -D[N]
        lam_lo = np.full(len(idx), 1e-300)
        lam_hi = np.full(len(idx), 1e300)
        for _ in range(200):
            lam = np.sqrt(lam_lo * lam_hi)
            tot = np.clip(w / lam[:, None], aN, bN).sum(1)
            big = tot > target
            lam_lo = np.where(big, lam, lam_lo)
            lam_hi = np.where(big, lam_hi, lam)
        xN = np.clip(w / lam_hi[:, None], aN, bN)
        # spread any rounding residue proportionally to the free room
        resid = target - xN.sum(1)
        room = np.where(resid[:, None] > 0, bN - xN, xN - aN)
        share = room / np.maximum(room.sum(1, keepdims=True), 1e-300)
        xN = xN + resid[:, None] * share
        out[idx] = level_of(lo[np.ix_(idx, P)], xN)
    # deficit: raise concave coordinates; enumerate vertex patterns
    deficit = s_hi < 1.0
    if np.any(deficit) and len(P):
        idx = np.flatnonzero(deficit)
        aP, bP = lo[np.ix_(idx, P)], hi[np.ix_(idx, P)]
        target = 1.0 - hi[np.ix_(idx, N)].sum(1) - hi[np.ix_(idx, Z)].sum(1)
        best = np.full(len(idx), np.inf)
        p = len(P)
        for j in range(p):
            others = [t for t in range(p) if t != j]
            for mask in itertools.product((0, 1), repeat=p - 1):
                x = aP.copy()
                for t, up in zip(others, mask):
                    if up:
                        x[:, t] = bP[:, t]
                rest = target - (x.sum(1) - x[:, j])
                ok = (rest >= aP[:, j] - 1e-15) & (rest <= bP[:, j] + 1e-15)
                x[:, j] = np.clip(rest, aP[:, j], bP[:, j])
                val = (D[P] * _safe_log(x)).sum(1)
                if len(N):
                    val = val + (D[N] * _safe_log(hi[np.ix_(idx, N)])).sum(1)
                best = np.where(ok, np.minimum(best, val - ts.threshold), best)
        out[idx] = best
    return out


def _line_distance(ts: SimplexTestSet, logq: np.ndarray, r: float, iters: int = 80) -> np.ndarray:
    """W_r length of a projected-gradient step from ``q`` to the boundary."""
    q = np.exp(logq)
    g = ts.deltas / np.maximum(q, 1e-300)
    d = -(g - g.mean(axis=1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax = np.min(np.where(d < 0, -q / d, np.inf), axis=1)
    tmax = np.where(np.isfinite(tmax), tmax, 0.0) * (1 - 1e-12)
    end = q + tmax[:, None] * d
    reach = ts.level(_safe_log(end)) < 0
    lo = np.zeros(len(q))
    hi = tmax.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = ts.level(_safe_log(q + mid[:, None] * d)) < 0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    target = np.clip(q + hi[:, None] * d, 0.0, None)
    target /= target.sum(1, keepdims=True)
    dist = np.full(len(q), np.inf)
    if np.any(reach):
        dist[reach] = batch_wasserstein(ts.atoms, q[reach], ts.atoms, target[reach], r)
    return dist


def tube_measure(ts: SimplexTestSet, delta: float, r: float = 1.0, n_mc: int = 100_000, seed: int = 0, surrogate: str = "linf") -> TubeEstimate:
    """Monte Carlo ``D(B_delta \\ B)`` under ``D = Dir(alpha beta)``.

    Parameters
    ----------
    surrogate : {"linf", "line"}
        ``linf`` counts ``q`` whose ell-infinity box of radius
        ``(delta / m)^r`` meets ``B`` (a superset of the W_r tube).
        ``line`` counts ``q`` whose gradient-path step to the boundary has
        W_r length at most ``delta`` (a subset of the W_r tube).
    """
    if delta < 0:
        raise InvalidParameter("delta must be nonnegative")
    if surrogate not in ("linf", "line"):
        raise InvalidParameter("surrogate must be 'linf' or 'line'")
    if delta == 0 or ts.degenerate:
        return TubeEstimate(float(delta), 0.0, 0.0, int(n_mc), surrogate)
    m = min_separation(ts.atoms)
    rho = (delta / m) ** r
    rng = stream(seed, "tube")
    hits = 0
    done = 0
    while done < n_mc:
        b = min(CHUNK, n_mc - done)
        logq = log_dirichlet(ts.params, b, rng)
        outside = ~ts.contains_log(logq)
        if np.any(outside):
            lq = logq[outside]
            if surrogate == "linf":
                near = _box_min_level(ts, np.exp(lq), rho) < 0
            else:
                near = _line_distance(ts, lq, r) <= delta
            hits += int(near.sum())
        done += b
    p = hits / n_mc
    return TubeEstimate(float(delta), p, math.sqrt(p * (1 - p) / n_mc), int(n_mc), surrogate)


@dataclass(frozen=True)
class RegularityFit:
    exponent: float
    intercept: float
    r2: float
    target_exponent: float
    case: str = ""
    estimates: tuple = ()

    def to_json(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "r2": self.r2,
            "target_exponent": self.target_exponent,
            "case": self.case,
            "estimates": [e.row() for e in self.estimates],
        }


def regularity_exponent_fit(
    ts: SimplexTestSet,
    G=None,
    Gp=None,
    alpha=None,
    r: float = 1.0,
    delta_grid=None,
    n_mc: int = 100_000,
    seed: int = 0,
    surrogate: str = "linf",
) -> RegularityFit:
    """Slope of ``log D(B_delta \\ B)`` against ``log delta``.

    All grid points share one random stream, so the estimates are
    nondecreasing in ``delta`` by construction (and this is asserted).  The
    target exponent is ``alpha* r`` with ``alpha* = min_i alpha beta_i`` when
    some ``alpha beta_i < 1``, and ``r`` otherwise.
    """
    if delta_grid is None:
        raise InvalidParameter("delta_grid is required")
    grid = np.sort(np.asarray(delta_grid, float))
    ests = tuple(tube_measure(ts, float(d), r, n_mc, seed, surrogate) for d in grid)
    vals = np.array([e.measure for e in ests])
    if np.any(np.diff(vals) < 0):
        raise AssertionError("tube measure decreased along the delta grid")
    usable = vals > 0
    if usable.sum() < 5:
        raise InsufficientSignal(f"only {int(usable.sum())} grid points with a nonzero tube estimate")
    x, y = np.log(grid[usable]), np.log(vals[usable])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, icpt])
    r2 = 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)
    a_star = float(np.min(ts.params))
    if np.all(ts.params >= 1):
        case, target = "a", float(r)
    elif np.all(ts.params < 1):
        case, target = "b", a_star * r
    else:
        case, target = "mixed", a_star * r
    return RegularityFit(float(slope), float(icpt), float(r2), target, case, ests)


# ---------------------------------------------------------------------------
# Disjoint supports
# ---------------------------------------------------------------------------


def disjoint_gap_lower_bound(alphap: float, outside_mass: float) -> float:
    """``(1/2)^{2 a'} Gamma(a') a' G'(S^c) / max_{1<=x<=a'+1} Gamma(x)^2``."""
    xs = np.linspace(1.0, alphap + 1.0, 2001)
    gmax = float(np.exp(2 * gammaln(xs)).max())
    return 0.5 ** (2 * alphap) * math.gamma(alphap) * alphap * outside_mass / gmax


@dataclass(frozen=True)
class DisjointGap:
    gap: float
    stderr: float
    n_mc: int
    mass_p: float
    mass: float
    outside_mass: float
    radius: float
    lower_bound: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def disjoint_support_test(
    G: DiscreteMeasure,
    Gp: DiscreteMeasure,
    alpha: float,
    n_mc: int = 100_000,
    seed: int = 0,
    alphap: float | None = None,
    radius: float | None = None,
) -> DisjointGap:
    """Monte Carlo ``D'(B) - D(B)`` for ``B = {Q : Q(S^c) > 1/2}``.

    ``S`` is the union of closed balls of ``radius`` around the atoms of
    ``G`` (default: half the smallest distance from an atom of ``G'`` to an
    atom of ``G``).  Since ``D`` charges only measures on ``S``, ``D(B) = 0``.
    """
    alphap = alpha if alphap is None else alphap
    X, Y = G.locations, Gp.locations
    cross = np.sqrt(((Y[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    if cross.min() <= 0:
        raise SupportsOverlap("an atom of G' coincides with an atom of G")
    radius = 0.5 * float(cross.min()) if radius is None else float(radius)
    outside_p = cross.min(axis=1) > radius
    b = float(Gp.weights[outside_p].sum())

    rng = stream(seed, "disjoint")
    hits_p = hits = 0
    done = 0
    while done < n_mc:
        n = min(CHUNK, n_mc - done)
        qp = np.exp(log_dirichlet(alphap * Gp.weights, n, rng))
        hits_p += int((qp[:, outside_p].sum(1) > 0.5).sum())
        q = np.exp(log_dirichlet(alpha * G.weights, n, rng))
        outside = np.zeros(G.size, dtype=bool)  # G's atoms are the ball centers
        hits += int((q[:, outside].sum(1) > 0.5).sum())
        done += n
    pp, p = hits_p / n_mc, hits / n_mc
    se = math.sqrt((pp * (1 - pp) + p * (1 - p)) / n_mc)
    return DisjointGap(pp - p, se, int(n_mc), pp, p, b, radius, disjoint_gap_lower_bound(alphap, b))


def margin_constant(G: DiscreteMeasure, Gp: DiscreteMeasure, r: float) -> float:
    """``W_r^r(G, G') / (2 diam)^r``, the required lower bound on the gap."""
    return wasserstein(G, Gp, r).distance ** r / (2 * G.domain.diameter) ** r


# ---------------------------------------------------------------------------
# Sparse supports: covering-ball projection
# ---------------------------------------------------------------------------


def sparse_tube_report(S, eps_grid, alpha: float, alphap: float, tilt: float = 1.0, delta_frac=(0.01, 0.1), r: float = 1.0, n_mc: int = 20_000, seed: int = 0):
    """Tube measures of the projected test set across covering scales.

    ``G`` carries the weights of ``S`` and ``G'`` the exponentially tilted
    weights ``w_i exp(tilt x_i1)``.  At each scale ``eps`` both are projected
    onto the balls of :func:`~hdp_transport.sparse_geometry.covering`, the
    finite-dimensional test set is built on the ball centers and its tube is
    estimated at ``delta = frac * eps`` for each ``frac``.  Only a scaling
    report is produced.

    Returns
    -------
    list of dict
        Keys ``eps``, ``K``, ``delta``, ``estimate``, ``stderr``.
    """
    from .sparse_geometry import covering

    w = S.weights if S.weights is not None else np.full(len(S.points), 1.0 / len(S.points))
    wp = w * np.exp(tilt * (S.points[:, 0] - S.points[:, 0].mean()))
    wp = wp / wp.sum()
    rows = []
    for j, eps in enumerate(np.asarray(eps_grid, float)):
        cov = covering(S, float(eps))
        mass = np.bincount(cov.assignment, weights=w, minlength=cov.count)
        mass_p = np.bincount(cov.assignment, weights=wp, minlength=cov.count)
        keep = (mass > 0) & (mass_p > 0)
        if keep.sum() < 2:
            continue
        ts = test_set_from_params(cov.centers[keep], alpha * mass[keep] / mass[keep].sum(), alphap * mass_p[keep] / mass_p[keep].sum())
        for frac in delta_frac:
            est = tube_measure(ts, float(frac * eps), r, n_mc, int(np.random.SeedSequence([seed, j]).generate_state(1)[0]))
            rows.append({"eps": float(eps), "K": int(keep.sum()), "delta": est.delta, "estimate": est.measure, "stderr": est.stderr})
    return rows
