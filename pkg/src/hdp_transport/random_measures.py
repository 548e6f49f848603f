"""Seeded samplers for Dirichlet processes and the hierarchical model.

Dirichlet processes are drawn by truncated stick-breaking: ``k`` fractions
``v_j ~ Beta(1, alpha)`` give weights ``p_i = v_i prod_{j<i}(1 - v_j)`` and
the leftover mass ``prod_{j<=k}(1 - v_j)`` is added to the ``k``-th atom, so
every draw is an exact probability measure.  The truncation level can be
chosen from the closed-form tail bound :func:`tail_mass_bound`.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameter, PartitionGap
from .rng import stream
from .transport import BoundedDomain, DiscreteMeasure

__all__ = [
    "StickBreakingTruncation",
    "UniformBoxSampler",
    "DPSample",
    "HierarchySample",
    "tail_mass_bound",
    "tail_bound_is_valid",
    "stick_breaking",
    "sample_dp",
    "sample_dp_masses",
    "sample_hdp",
    "sample_groups",
    "finite_dirichlet_projection",
    "log_dirichlet",
    "dirichlet_masses",
]


# ---------------------------------------------------------------------------
# Truncation bookkeeping
# ---------------------------------------------------------------------------


def tail_mass_bound(eps: float, k: int, alpha: float) -> float:
    """Closed-form bound on ``P(1 - sum_{i<=k} p_i >= eps)``.

    ``Delta(eps, k) = exp[-alpha log(1/eps) - k log k + k log(e alpha)
    + k log log(1/eps)]``.  It follows from Markov's inequality applied to
    ``(1 - sum p_i)^{-t}`` with ``t = k / log(1/eps) - alpha`` and is a valid
    probability bound only when that ``t`` is positive, i.e.
    ``k > alpha log(1/eps)``; the formula itself is returned for any ``k``.
    """
    if not 0 < eps < math.exp(-1):
        raise InvalidParameter("tail bound needs 0 < eps < 1/e")
    if k < 1 or alpha <= 0:
        raise InvalidParameter("need k >= 1 and alpha > 0")
    L = math.log(1.0 / eps)
    expo = -alpha * L - k * math.log(k) + k * math.log(math.e * alpha) + k * math.log(L)
    return math.exp(expo)


def tail_bound_is_valid(eps: float, k: int, alpha: float) -> bool:
    """Whether the Markov exponent ``k / log(1/eps) - alpha`` is positive."""
    return k > alpha * math.log(1.0 / eps)


@dataclass(frozen=True)
class StickBreakingTruncation:
    """Number of sticks kept, with the tail-bound resolution it was sized for."""

    k: int
    alpha: float
    tail_bound_eps: float = 0.01

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidParameter("truncation level k must be a positive integer")
        if self.alpha <= 0:
            raise InvalidParameter("alpha must be positive")
        if not 0 < self.tail_bound_eps < 1:
            raise InvalidParameter("tail_bound_eps must lie in (0, 1)")
        object.__setattr__(self, "k", int(self.k))

    @property
    def bound(self) -> float:
        """``Delta(tail_bound_eps, k)``; infinite when the formula is undefined."""
        if self.tail_bound_eps >= math.exp(-1):
            return math.inf
        return tail_mass_bound(self.tail_bound_eps, self.k, self.alpha)

    @classmethod
    def for_tolerance(cls, alpha: float, eps: float, target: float = 1e-4, k_max: int = 100_000):
        """Smallest valid ``k`` with ``Delta(eps, k) < target``.

        Only ``k > alpha log(1/eps)`` is considered, where the bound holds.
        """
        k = max(1, int(math.floor(alpha * math.log(1.0 / eps))) + 1)
        while tail_mass_bound(eps, k, alpha) >= target:
            k += 1
            if k > k_max:
                raise InvalidParameter("no truncation level below k_max meets the target")
        return cls(k, alpha, eps)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Base samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformBoxSampler:
    """Uniform distribution on a box; stands in for a non-atomic base measure."""

    domain: BoundedDomain

    @property
    def base_id(self) -> str:
        return f"uniform{list(self.domain.lower)}-{list(self.domain.upper)}"

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        lo, hi = self.domain.lo, self.domain.hi
        return lo + (hi - lo) * rng.random(shape + (self.domain.dim,))

    def to_json(self) -> dict:
        return {"kind": "uniform", "domain": self.domain.to_json()}


Base = Union[DiscreteMeasure, UniformBoxSampler]


def _base_id(base: Base) -> str:
    if isinstance(base, UniformBoxSampler):
        return base.base_id
    return f"discrete{base.size}@{zlib.crc32(base.locations.tobytes() + base.weights.tobytes()):08x}"


def base_from_json(obj: dict) -> Base:
    if obj.get("kind") == "uniform":
        return UniformBoxSampler(BoundedDomain.from_json(obj["domain"]))
    return DiscreteMeasure.from_json(obj)


# ---------------------------------------------------------------------------
# Stick-breaking
# ---------------------------------------------------------------------------


def stick_breaking(alpha: float, k: int, rng: np.random.Generator, size: int | None = None):
    """Truncated stick-breaking weights.

    Returns
    -------
    weights : ndarray, shape (k,) or (size, k)
        Weights with the residual mass folded into the last stick.
    tail : float or ndarray
        Residual mass ``prod_{j<=k}(1 - v_j)`` before it was folded in.
    """
    if alpha <= 0:
        raise InvalidParameter("alpha must be positive")
    shape = (k,) if size is None else (size, k)
    v = rng.beta(1.0, alpha, size=shape)
    keep = np.cumprod(1.0 - v, axis=-1)
    before = np.concatenate([np.ones(shape[:-1] + (1,)), keep[..., :-1]], axis=-1)
    p = v * before
    tail = keep[..., -1]
    p[..., -1] += tail
    p /= p.sum(axis=-1, keepdims=True)
    return p, tail


@dataclass(frozen=True)
class DPSample:
    measure: DiscreteMeasure
    alpha: float
    base_id: str
    seed: int
    truncation: StickBreakingTruncation
    realized_tail_mass: float

    def to_json(self) -> dict:
        return {
            "measure": self.measure.to_json(),
            "alpha": self.alpha,
            "base_id": self.base_id,
            "seed": self.seed,
            "truncation": self.truncation.to_json(),
            "realized_tail_mass": self.realized_tail_mass,
        }


def _check_trunc(alpha: float, trunc: StickBreakingTruncation) -> StickBreakingTruncation:
    if alpha <= 0:
        raise InvalidParameter("alpha must be positive")
    if trunc.alpha != alpha:
        trunc = dataclasses.replace(trunc, alpha=float(alpha))
    return trunc


def sample_dp(alpha: float, base: Base, trunc: StickBreakingTruncation, seed: int) -> DPSample:
    """One truncated draw from ``D_alpha(base)``.

    Parameters
    ----------
    alpha : float
        Concentration, ``> 0``.
    base : DiscreteMeasure or UniformBoxSampler
        A discrete base is sampled categorically over its atoms.
    trunc : StickBreakingTruncation
        Number of sticks ``k``.
    seed : int
        Root seed; the draw is a pure function of it.
    """
    trunc = _check_trunc(alpha, trunc)
    p, tail = stick_breaking(alpha, trunc.k, stream(seed, "sticks"))
    atoms_rng = stream(seed, "atoms")
    if isinstance(base, DiscreteMeasure):
        idx = atoms_rng.choice(base.size, size=trunc.k, p=base.weights)
        locs = base.locations[idx]
        domain = base.domain
    else:
        locs = base.sample(atoms_rng, trunc.k)
        domain = base.domain
    measure = DiscreteMeasure(domain, locs, p)
    return DPSample(measure, float(alpha), _base_id(base), int(seed), trunc, float(tail))


def sample_dp_masses(alpha: float, base_weights, k: int, n: int, rng: np.random.Generator):
    """Batch of ``n`` truncated DP draws over a finite base, as atom masses.

    Returns
    -------
    masses : ndarray, shape (n, len(base_weights))
        Row ``s`` is the draw's mass on each base atom.
    tail : ndarray, shape (n,)
        Realized tail mass of each draw.
    """
    bw = np.asarray(base_weights, dtype=float)
    K = len(bw)
    p, tail = stick_breaking(alpha, k, rng, size=n)
    idx = rng.choice(K, size=(n, k), p=bw / bw.sum())
    flat = (np.arange(n)[:, None] * K + idx).ravel()
    masses = np.bincount(flat, weights=p.ravel(), minlength=n * K).reshape(n, K)
    return masses, tail


def log_dirichlet(params, n: int, rng: np.random.Generator) -> np.ndarray:
    """Log of ``n`` Dirichlet draws, accurate for very small parameters.

    Uses ``Gamma(a) = Gamma(a + 1) U^{1/a}`` in log space so components far
    below the double-precision floor keep their relative size.
    """
    a = np.asarray(params, dtype=float)
    if np.any(a <= 0):
        raise InvalidParameter("Dirichlet parameters must be positive")
    g = rng.standard_gamma(a + 1.0, size=(n, len(a)))
    u = rng.random((n, len(a)))
    logg = np.log(g) + np.log(u) / a
    m = logg.max(axis=1, keepdims=True)
    return logg - m - np.log(np.exp(logg - m).sum(axis=1, keepdims=True))


def dirichlet_masses(alpha: float, G: DiscreteMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws of ``Q ~ D_alpha G`` for finite ``G``, as masses on G's atoms."""
    return np.exp(log_dirichlet(alpha * G.weights, n, rng))


# ---------------------------------------------------------------------------
# Hierarchical model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HierarchySample:
    G: DPSample
    Qs: tuple
    groups: Optional[tuple] = None

    @property
    def m(self) -> int:
        return len(self.Qs)

    def to_json(self) -> dict:
        out = {"G": self.G.to_json(), "Qs": [q.to_json() for q in self.Qs]}
        if self.groups is not None:
            out["groups"] = [np.asarray(g).tolist() for g in self.groups]
        return out


def sample_hdp(
    gamma: float,
    H: Base,
    alpha: float,
    m: int,
    trunc: StickBreakingTruncation,
    seed: int,
    trunc_G: StickBreakingTruncation | None = None,
) -> HierarchySample:
    """Draw ``G ~ D_gamma H`` and then ``Q_1..Q_m ~ D_alpha G`` iid.

    ``trunc`` sizes the group-level draws; ``trunc_G`` (default: same ``k``)
    sizes the top-level draw.  Every ``Q_i`` uses its own stream so group
    ``i`` is reproducible on its own.
    """
    if int(m) != m or m < 1:
        raise InvalidParameter("m must be a positive integer")
    if gamma <= 0:
        raise InvalidParameter("gamma must be positive")
    tG = trunc_G or StickBreakingTruncation(trunc.k, gamma, trunc.tail_bound_eps)
    G = sample_dp(gamma, H, tG, int(np.random.SeedSequence([seed, 0]).generate_state(1)[0]))
    Qs = tuple(
        sample_dp(alpha, G.measure, trunc, int(np.random.SeedSequence([seed, 1, i]).generate_state(1)[0]))
        for i in range(int(m))
    )
    return HierarchySample(G, Qs)


def sample_groups(h: HierarchySample, kernel, n: int, seed: int) -> HierarchySample:
    """Attach ``n`` iid draws from each mixture ``Q_i * f`` to the sample."""
    if int(n) != n or n < 1:
        raise InvalidParameter("n must be a positive integer")
    groups = []
    for i, q in enumerate(h.Qs):
        rng = stream(seed, "groups", i)
        Q = q.measure
        idx = rng.choice(Q.size, size=int(n), p=Q.weights)
        groups.append(Q.locations[idx] + kernel.sample_noise(rng, int(n)))
    return dataclasses.replace(h, groups=tuple(groups))


def finite_dirichlet_projection(G: DiscreteMeasure, partition: Sequence, alpha: float = 1.0) -> np.ndarray:
    """Dirichlet parameters ``(alpha G(B_1), ..., alpha G(B_k))`` of a partition.

    Parameters
    ----------
    partition : sequence of (lower, upper) pairs
        Cells are half-open ``[lower, upper)`` except along faces that lie on
        the domain's upper boundary, which are closed.
    """
    if alpha <= 0:
        raise InvalidParameter("alpha must be positive")
    hi = G.domain.hi
    out = np.zeros(len(partition))
    covered = np.zeros(G.size, dtype=bool)
    for c, (lo_c, hi_c) in enumerate(partition):
        lo_c = np.broadcast_to(np.asarray(lo_c, float), (G.dim,))
        hi_c = np.broadcast_to(np.asarray(hi_c, float), (G.dim,))
        upper_ok = (G.locations < hi_c) | ((G.locations == hi_c) & (hi_c >= hi))
        inside = np.all((G.locations >= lo_c) & upper_ok, axis=1) & ~covered
        out[c] = G.weights[inside].sum()
        covered |= inside
    if not covered.all():
        raise PartitionGap(f"{int((~covered).sum())} atoms are not covered by the partition")
    return alpha * out


def dirichlet_log_density(logq: np.ndarray, params) -> np.ndarray:
    """Log density of ``Dir(params)`` at points given by ``log q``."""
    a = np.asarray(params, dtype=float)
    return gammaln(a.sum()) - gammaln(a).sum() + np.sum((a - 1.0) * logq, axis=-1)
