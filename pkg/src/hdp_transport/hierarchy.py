"""Transport distances between ensembles of measures and Dirichlet couplings.

An ensemble of discrete measures is an empirical stand-in for a law on the
space of measures.  :func:`nested_wasserstein` lifts W_r to ensembles: all
pairwise W_r values become the ground cost (raised to ``r``) of an outer
transport problem over ensemble indices.

:func:`coupled_dp_pair` draws ``(Q, Q')`` with ``Q ~ D_alpha G`` and
``Q' ~ D_alpha G'`` jointly, by running one stick-breaking process whose
atoms are pairs drawn from an optimal coupling of ``G`` and ``G'``.  The
expected transport cost of that pair never exceeds ``W_r^r(G, G')``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainMismatch, InvalidEnsemble, InvalidParameter
from .random_measures import StickBreakingTruncation, sample_dp_masses, stick_breaking
from .rng import stream
from .transport import DiscreteMeasure, cost_matrix, solve_transport, wasserstein, wasserstein_1d_batch

__all__ = [
    "MeasureEnsemble",
    "NestedTransportResult",
    "IdentityBracket",
    "nested_wasserstein",
    "coupled_dp_pair",
    "coupled_dp_batch",
    "mean_measure",
    "batch_wasserstein",
    "identity_bracket",
]


@dataclass(frozen=True)
class MeasureEnsemble:
    """Finite weighted collection of measures on one domain."""

    members: tuple
    weights: np.ndarray | None = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise InvalidEnsemble("an ensemble needs at least one member")
        dom = members[0].domain
        if any(m.domain != dom for m in members):
            raise DomainMismatch("ensemble members live on different domains")
        w = np.full(len(members), 1.0 / len(members)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(members),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidEnsemble("ensemble weights must be a probability vector over members")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", w)

    @property
    def domain(self):
        return self.members[0].domain

    def __len__(self) -> int:
        return len(self.members)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


@dataclass(frozen=True)
class NestedTransportResult:
    order: float
    distance: float
    outer_coupling: np.ndarray
    pairwise_costs: np.ndarray

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "distance": self.distance,
            "outer_coupling": self.outer_coupling.tolist(),
            "pairwise_costs": self.pairwise_costs.tolist(),
        }


def nested_wasserstein(A: MeasureEnsemble, B: MeasureEnsemble, r: float = 1.0) -> NestedTransportResult:
    """Wasserstein distance between two ensembles of measures.

    Parameters
    ----------
    A, B : MeasureEnsemble
        Ensembles on a shared domain.
    r : float
        Order used both for the pairwise W_r and for the outer problem.

    Notes
    -----
    Equal-size uniform ensembles give an assignment problem (Birkhoff), which
    is solved exactly by ``scipy.optimize.linear_sum_assignment``; all other
    shapes go through the transportation simplex.
    """
    if r < 1:
        raise InvalidParameter("order r must be >= 1")
    if not isinstance(A, MeasureEnsemble) or not isinstance(B, MeasureEnsemble):
        raise InvalidEnsemble("arguments must be MeasureEnsemble instances")
    if A.domain != B.domain:
        raise DomainMismatch("ensembles live on different domains")
    W = np.empty((len(A), len(B)))
    for a, Ga in enumerate(A.members):
        for b, Gb in enumerate(B.members):
            W[a, b] = 0.0 if Ga is Gb else wasserstein(Ga, Gb, r).distance
    C = W**r
    if len(A) == len(B) and A.is_uniform and B.is_uniform:
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros_like(C)
        plan[rows, cols] = 1.0 / len(A)
    else:
        plan, _ = solve_transport(A.weights, B.weights, C)
    cost = max(float(np.sum(plan * C)), 0.0)
    return NestedTransportResult(float(r), cost ** (1.0 / r), plan, W)


def mean_measure(A: MeasureEnsemble) -> DiscreteMeasure:
    """Weighted pooling ``sum_a w_a P_a`` with coincident atoms merged."""
    if len(A) == 0:
        raise InvalidEnsemble("empty ensemble")
    locs = np.concatenate([m.locations for m in A.members])
    w = np.concatenate([wa * m.weights for wa, m in zip(A.weights, A.members)])
    return DiscreteMeasure(A.domain, locs, w / w.sum())


def _pair_atoms(G: DiscreteMeasure, Gp: DiscreteMeasure, r: float):
    res = wasserstein(G, Gp, r)
    kappa = res.coupling.weights
    ii, jj = np.nonzero(kappa > 0)
    return ii, jj, kappa[ii, jj] / kappa[ii, jj].sum()


def coupled_dp_pair(G: DiscreteMeasure, Gp: DiscreteMeasure, alpha: float, r: float, trunc: StickBreakingTruncation, seed: int):
    """Jointly draw ``Q ~ D_alpha G`` and ``Q' ~ D_alpha G'``.

    A single stick-breaking draw ``gamma ~ D_{alpha kappa}`` is taken with
    pair atoms ``(theta, theta')`` sampled from an optimal coupling
    ``kappa`` of ``(G, G')``.  ``Q`` and ``Q'`` are its two marginals.
    """
    if G.domain != Gp.domain:
        raise DomainMismatch("measures live on different domains")
    ii, jj, pw = _pair_atoms(G, Gp, r)
    p, _ = stick_breaking(alpha, trunc.k, stream(seed, "sticks"))
    pick = stream(seed, "atoms").choice(len(pw), size=trunc.k, p=pw)
    Q = DiscreteMeasure(G.domain, G.locations[ii[pick]], p)
    Qp = DiscreteMeasure(Gp.domain, Gp.locations[jj[pick]], p)
    return Q, Qp


def coupled_dp_batch(G: DiscreteMeasure, Gp: DiscreteMeasure, alpha: float, r: float, k: int, n: int, seed: int):
    """``n`` coupled draws as masses on the atoms of ``G`` and ``G'``.

    Returns
    -------
    masses, masses_p : ndarray, shapes (n, |G|) and (n, |G'|)
    """
    ii, jj, pw = _pair_atoms(G, Gp, r)
    pair_masses, _ = sample_dp_masses(alpha, pw, k, n, stream(seed, "coupled"))
    masses = np.zeros((n, G.size))
    masses_p = np.zeros((n, Gp.size))
    for c in range(len(pw)):
        masses[:, ii[c]] += pair_masses[:, c]
        masses_p[:, jj[c]] += pair_masses[:, c]
    return masses, masses_p


def batch_wasserstein(locs, masses, locs_p, masses_p, r: float) -> np.ndarray:
    """Row-wise W_r between measures on two fixed atom sets.

    ``locs`` has shape (K, d) and ``masses`` shape (N, K); likewise for the
    primed arguments.  One-dimensional problems use the quantile formula,
    the rest call the transportation simplex row by row.
    """
    locs = np.asarray(locs, float)
    locs_p = np.asarray(locs_p, float)
    masses = np.atleast_2d(masses)
    masses_p = np.atleast_2d(masses_p)
    if locs.shape[1] == 1:
        return wasserstein_1d_batch(locs[:, 0], masses, locs_p[:, 0], masses_p, r)
    C = cost_matrix(locs, locs_p, r)
    N = max(len(masses), len(masses_p))
    masses = np.broadcast_to(masses, (N, masses.shape[1]))
    masses_p = np.broadcast_to(masses_p, (N, masses_p.shape[1]))
    out = np.empty(N)
    for s in range(N):
        a, b = masses[s], masses_p[s]
        ia, ib = a > 0, b > 0
        _, cost = solve_transport(a[ia] / a[ia].sum(), b[ib] / b[ib].sum(), C[np.ix_(ia, ib)])
        out[s] = max(cost, 0.0) ** (1.0 / r)
    return out


@dataclass(frozen=True)
class IdentityBracket:
    """Two-sided Monte Carlo bracket around ``W_r^r(G, G')``."""

    target: float
    upper: float
    upper_se: float
    lower: float
    lower_se: float
    n: int
    k: int

    @property
    def holds(self) -> bool:
        # rounding slack for degenerate cases (e.g. Dirac pairs) where the
        # bracket collapses onto the target
        tol = 1e-12 * max(1.0, abs(self.target))
        return self.lower - 3 * self.lower_se - tol <= self.target <= self.upper + 3 * self.upper_se + tol

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "upper": self.upper,
            "upper_se": self.upper_se,
            "lower": self.lower,
            "lower_se": self.lower_se,
            "n": self.n,
            "k": self.k,
            "holds": self.holds,
        }


def identity_bracket(
    G: DiscreteMeasure,
    Gp: DiscreteMeasure,
    alpha: float,
    r: float,
    n: int = 2000,
    trunc: StickBreakingTruncation | None = None,
    seed: int = 0,
    n_boot: int = 200,
) -> IdentityBracket:
    """Bracket ``W_r^r(G, G')`` between two ensemble statistics.

    upper
        Mean of ``W_r^r(Q, Q')`` over ``n`` coupled draws.  The coupled pair
        is one admissible coupling of ``D_alpha G`` and ``D_alpha G'``, so
        this estimates an upper bound on their nested distance.
    lower
        ``W_r^r`` between the mean measures of two independent ensembles of
        ``n`` draws each.  The nested distance of any two ensembles is at
        least the distance of their means, and each mean estimates its base.
    """
    if trunc is None:
        trunc = StickBreakingTruncation.for_tolerance(alpha, 0.01**r)
    k = trunc.k
    Qm, Qpm = coupled_dp_batch(G, Gp, alpha, r, k, n, seed)
    costs = batch_wasserstein(G.locations, Qm, Gp.locations, Qpm, r) ** r
    upper, upper_se = float(costs.mean()), float(costs.std(ddof=1) / np.sqrt(n))

    A, _ = sample_dp_masses(alpha, G.weights, k, n, stream(seed, "ensemble", 0))
    B, _ = sample_dp_masses(alpha, Gp.weights, k, n, stream(seed, "ensemble", 1))
    mean_a, mean_b = A.mean(axis=0), B.mean(axis=0)
    lower = float(batch_wasserstein(G.locations, mean_a, Gp.locations, mean_b, r)[0] ** r)
    boot = stream(seed, "bootstrap")
    ia = boot.integers(0, n, size=(n_boot, n))
    ib = boot.integers(0, n, size=(n_boot, n))
    ma = A[ia].mean(axis=1)
    mb = B[ib].mean(axis=1)
    reps = batch_wasserstein(G.locations, ma, Gp.locations, mb, r) ** r
    lower_se = float(reps.std(ddof=1))
    target = wasserstein(G, Gp, r).distance ** r
    return IdentityBracket(target, upper, upper_se, lower, lower_se, n, k)
