"""Demixing: eta-MLE of a finite mixing measure and plug-in base estimates.

:func:`eta_mle` maximises the empirical log-likelihood of ``Q * f`` over
measures with at most ``k_max`` atoms inside the domain box, with a
multi-start EM.  Every M-step is an exact maximiser (or a minorise-maximise
step for the Cauchy kernel) of the expected complete-data log-likelihood over
the box, so the log-likelihood never decreases; this is checked on every
iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .errors import EmptyData, InvalidParameter, NumericalFailure
from .kernels import KernelModel, MixtureSpec
from .rng import stream
from .transport import BoundedDomain, DiscreteMeasure, wasserstein

__all__ = [
    "DemixConfig",
    "DemixResult",
    "eta_mle",
    "weights_only_mle",
    "demix_rate_curve",
    "plug_in_base_estimate",
    "merge_atoms",
]

MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class DemixConfig:
    k_max: int = 2
    eta: float = 0.0
    restarts: int = 8
    tol: float = 1e-8
    max_iters: int = 500

    def __post_init__(self):
        if self.k_max < 1:
            raise InvalidParameter("k_max must be >= 1")
        if self.eta < 0:
            raise InvalidParameter("eta must be >= 0")
        if self.restarts < 1:
            raise InvalidParameter("restarts must be >= 1")


@dataclass(frozen=True)
class DemixResult:
    Q_hat: DiscreteMeasure
    loglik_per_obs: float
    eta_achieved: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "Q_hat": self.Q_hat.to_json(),
            "loglik_per_obs": self.loglik_per_obs,
            "eta_achieved": self.eta_achieved,
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# EM building blocks
# ---------------------------------------------------------------------------


def _kmeanspp(Y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(Y)
    centers = [Y[rng.integers(n)]]
    d2 = np.sum((Y - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(Y[rng.integers(n)])
        else:
            centers.append(Y[rng.choice(n, p=d2 / total)])
        d2 = np.minimum(d2, np.sum((Y - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def _weighted_median(y: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Per-column weighted median of ``y`` (n,) under weights ``R`` (n, K)."""
    order = np.argsort(y, kind="stable")
    cum = np.cumsum(R[order], axis=0)
    half = 0.5 * cum[-1]
    idx = np.argmax(cum >= half[None, :], axis=0)
    return y[order][idx]


def _m_step_locations(Y, R, locs, kernel: KernelModel, domain: BoundedDomain):
    """Maximise ``sum_i R_ik log f(y_i - theta_k)`` over the box, per atom."""
    mass = R.sum(axis=0)
    live = mass > 0
    new = locs.copy()
    h = kernel.bandwidth
    if kernel.family == "gaussian":
        new[live] = (R[:, live].T @ Y) / mass[live, None]
    elif kernel.family == "laplace":
        for c in range(Y.shape[1]):
            new[live, c] = _weighted_median(Y[:, c], R[:, live])
    elif kernel.family == "cauchy":
        # one MM step: the Cauchy kernel is a scale mixture of Gaussians
        u = 1.0 / (1.0 + ((Y[:, None, :] - locs[None, :, :]) / h) ** 2)  # (n, K, d)
        wts = R[:, :, None] * u
        den = wts.sum(axis=0)
        ok = live[:, None] & (den > 0)
        num = np.einsum("nkd,nd->kd", wts, Y)
        new = np.where(ok, num / np.where(den > 0, den, 1.0), locs)
    else:
        for k in np.flatnonzero(live):
            for c in range(Y.shape[1]):
                mask = R[:, k] > 0
                yc, rk = Y[mask, c], R[mask, k]

                def neg(t):
                    val = -np.sum(rk * kernel.logpdf_1d(yc - t))
                    # compact kernels: leaving a point's support is infeasible
                    return val if np.isfinite(val) else 1e300

                lo = max(domain.lower[c], locs[k, c] - h)
                hi = min(domain.upper[c], locs[k, c] + h)
                res = minimize_scalar(neg, bounds=(lo, hi), method="bounded")
                if np.isfinite(res.fun) and res.fun < neg(locs[k, c]):
                    new[k, c] = res.x
    return domain.clip(new)


def _loglik_terms(Y, locs, logw, kernel):
    return kernel.logpdf(Y[:, None, :] - locs[None, :, :]) + logw[None, :]


def _run_em(Y, kernel, domain, locs, w, tol, max_iters, update_locations=True):
    trace = []
    prev = -np.inf
    for it in range(max_iters):
        with np.errstate(divide="ignore"):
            L = _loglik_terms(Y, locs, np.log(w), kernel)
        rowlog = logsumexp(L, axis=1)
        ll = float(rowlog.mean())
        if not np.isfinite(ll):
            raise NumericalFailure("log-likelihood is not finite")
        if ll < prev - MONOTONE_SLACK * (1.0 + abs(prev)):
            raise NumericalFailure(f"EM log-likelihood decreased from {prev} to {ll}")
        trace.append(ll)
        if it > 0 and ll - prev <= tol * (1.0 + abs(ll)):
            break
        prev = ll
        R = np.exp(L - rowlog[:, None])
        w = R.mean(axis=0)
        w = w / w.sum()
        if update_locations:
            locs = _m_step_locations(Y, R, locs, kernel, domain)
    return locs, w, trace


def _prepare(data, kernel: KernelModel, domain: BoundedDomain | None):
    Y = np.asarray(data, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None] if kernel.dim == 1 else Y.reshape(-1, kernel.dim)
    if len(Y) == 0:
        raise EmptyData("no observations")
    if not np.all(np.isfinite(Y)):
        raise NumericalFailure("data contain non-finite values")
    if domain is None:
        lo, hi = Y.min(axis=0), Y.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        domain = BoundedDomain(tuple(lo), tuple(hi))
    return Y, domain


def eta_mle(data, kernel: KernelModel, cfg: DemixConfig, seed: int, domain: BoundedDomain | None = None) -> DemixResult:
    """Multi-start EM estimate of the mixing measure.

    Parameters
    ----------
    data : ndarray, shape (n, d)
    kernel : KernelModel
    cfg : DemixConfig
    seed : int
    domain : BoundedDomain, optional
        Box the atoms are projected into; defaults to the data's bounding box.

    Returns
    -------
    DemixResult
        The first restart (in index order) whose per-observation
        log-likelihood is within ``cfg.eta`` of the best restart.
    """
    Y, domain = _prepare(data, kernel, domain)
    fits = []
    for r in range(cfg.restarts):
        rng = stream(seed, "restart", r)
        k = min(cfg.k_max, len(Y))
        locs0 = domain.clip(_kmeanspp(Y, k, rng))
        w0 = np.full(k, 1.0 / k)
        locs, w, trace = _run_em(Y, kernel, domain, locs0, w0, cfg.tol, cfg.max_iters)
        fits.append((trace[-1], locs, w, len(trace)))
    lls = np.array([f[0] for f in fits])
    best = float(lls.max())
    chosen = int(np.flatnonzero(lls >= best - cfg.eta)[0])
    ll, locs, w, iters = fits[chosen]
    Q_hat = DiscreteMeasure(domain, locs, w / w.sum())
    diag = {
        "restart_logliks": lls.tolist(),
        "iterations": [f[3] for f in fits],
        "chosen_restart": chosen,
    }
    return DemixResult(Q_hat, float(ll), best - float(ll), diag)


def weights_only_mle(data, kernel: KernelModel, atoms: DiscreteMeasure, tol: float = 1e-10, max_iters: int = 2000) -> DemixResult:
    """MLE of mixture weights with atom locations fixed to those of ``atoms``."""
    Y, _ = _prepare(data, kernel, atoms.domain)
    k = atoms.size
    locs, w, trace = _run_em(Y, kernel, atoms.domain, atoms.locations.copy(), np.full(k, 1.0 / k), tol, max_iters, update_locations=False)
    Q_hat = DiscreteMeasure(atoms.domain, locs, w / w.sum())
    return DemixResult(Q_hat, float(trace[-1]), 0.0, {"iterations": len(trace)})


# ---------------------------------------------------------------------------
# Rates and pooling
# ---------------------------------------------------------------------------


def demix_rate_curve(Q0: DiscreteMeasure, kernel: KernelModel, n_grid, reps: int, cfg: DemixConfig, seed: int, r: float = 2.0):
    """Mean ``W_r(Q_hat_n, Q0)`` and its standard error for each ``n``.

    Returns a list of dicts with keys ``n``, ``mean``, ``stderr``, ``reps``.
    """
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise InvalidParameter("n_grid must be strictly increasing")
    spec = MixtureSpec(Q0, kernel)
    rows = []
    for n in n_grid:
        errs = []
        for rep in range(reps):
            Y = spec.sample(n, stream(seed, "data", n, rep))
            res = eta_mle(Y, kernel, cfg, int(np.random.SeedSequence([seed, n, rep]).generate_state(1)[0]), Q0.domain)
            errs.append(wasserstein(res.Q_hat, Q0, r).distance)
        errs = np.array(errs)
        se = float(errs.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        rows.append({"n": n, "mean": float(errs.mean()), "stderr": se, "reps": reps})
    return rows


def merge_atoms(measure: DiscreteMeasure, radius: float) -> DiscreteMeasure:
    """Repeatedly merge the closest pair of atoms within ``radius``.

    Merged atoms move to their weight-weighted centroid.
    """
    locs = [np.array(x) for x in measure.locations]
    w = list(measure.weights)
    while len(locs) > 1:
        X = np.array(locs)
        D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(D, np.inf)
        i, j = np.unravel_index(int(np.argmin(D)), D.shape)
        if D[i, j] > radius:
            break
        tot = w[i] + w[j]
        c = (w[i] * locs[i] + w[j] * locs[j]) / tot
        for idx in sorted((i, j), reverse=True):
            del locs[idx]
            del w[idx]
        locs.append(c)
        w.append(tot)
    w = np.array(w)
    return DiscreteMeasure(measure.domain, np.array(locs), w / w.sum())


def plug_in_base_estimate(demixed, merge_radius: float) -> DiscreteMeasure:
    """Uniform pooling ``(1/m) sum_i Q_hat_i`` followed by :func:`merge_atoms`."""
    measures = [d.Q_hat if isinstance(d, DemixResult) else d for d in demixed]
    if not measures:
        raise InvalidParameter("need at least one demixed measure")
    m = len(measures)
    locs = np.concatenate([q.locations for q in measures])
    w = np.concatenate([q.weights / m for q in measures])
    pooled = DiscreteMeasure(measures[0].domain, locs, w / w.sum())
    return merge_atoms(pooled, merge_radius)
