"""Location kernels, mixture densities, marginal likelihoods and divergences.

A :class:`KernelModel` is a product of one-dimensional symmetric densities
``f(x | theta) = prod_i h^-1 f_1((x_i - theta_i) / h)``.  Mixtures ``Q * f``
are evaluated in log space.  For a finite base ``G`` the marginal density of
``n`` exchangeable observations under ``Q ~ D_alpha G`` is available exactly
for small ``n`` by summing Dirichlet moments over label assignments, and by
stick-breaking Monte Carlo otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import dawsn, gammaln, logsumexp

from .errors import DomainMismatch, InvalidParameter, KernelNotInvertible, NumericalUnderflow
from .random_measures import StickBreakingTruncation, dirichlet_masses, sample_dp_masses
from .rng import stream
from .transport import DiscreteMeasure

__all__ = [
    "KernelModel",
    "SmoothnessClass",
    "DivergenceEstimate",
    "MarginalLoglik",
    "MixtureSpec",
    "MarginalSpec",
    "mixture_logpdf",
    "mixture_density",
    "marginal_loglik",
    "marginal_logpdf_exact",
    "estimate_divergence",
    "classify_smoothness",
    "log_fourier_integral",
    "kl_lipschitz_constant",
]

FAMILIES = ("gaussian", "laplace", "cauchy", "triangular")


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelModel:
    """Symmetric product kernel with scale ``bandwidth`` in ``dim`` dimensions.

    ``gaussian`` has standard deviation ``h``, ``laplace`` and ``cauchy`` have
    scale ``h``, ``triangular`` has half-width ``h``.
    """

    family: str
    bandwidth: float
    dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameter(f"unknown kernel family {self.family!r}")
        if not self.bandwidth > 0:
            raise InvalidParameter("bandwidth must be positive")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidParameter("dim must be a positive integer")

    # -- densities -----------------------------------------------------------

    def logpdf_1d(self, x: np.ndarray) -> np.ndarray:
        h = self.bandwidth
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            return -0.5 * (x / h) ** 2 - 0.5 * math.log(2 * math.pi * h * h)
        if self.family == "laplace":
            return -np.abs(x) / h - math.log(2 * h)
        if self.family == "cauchy":
            return -np.log1p((x / h) ** 2) - math.log(math.pi * h)
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(1.0 - np.abs(x) / h, 0.0)) - math.log(h)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log density of displacement vectors ``x`` with trailing axis ``d``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainMismatch(f"expected trailing dimension {self.dim}")
        return self.logpdf_1d(x).sum(axis=-1)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample_noise(self, rng: np.random.Generator, size: int) -> np.ndarray:
        h, shape = self.bandwidth, (int(size), self.dim)
        if self.family == "gaussian":
            return h * rng.standard_normal(shape)
        if self.family == "laplace":
            return rng.laplace(0.0, h, shape)
        if self.family == "cauchy":
            return h * rng.standard_cauchy(shape)
        return h * (rng.random(shape) - rng.random(shape))

    # -- Fourier side --------------------------------------------------------

    def fourier_1d(self, omega: np.ndarray) -> np.ndarray:
        """Characteristic function of the one-dimensional factor."""
        w = self.bandwidth * np.asarray(omega, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * w * w)
        if self.family == "laplace":
            return 1.0 / (1.0 + w * w)
        if self.family == "cauchy":
            return np.exp(-np.abs(w))
        return np.sinc(w / (2 * np.pi)) ** 2

    def to_json(self) -> dict:
        return {"family": self.family, "bandwidth": self.bandwidth, "dim": self.dim}

    @classmethod
    def from_json(cls, obj: dict) -> KernelModel:
        return cls(obj["family"], float(obj["bandwidth"]), int(obj.get("dim", 1)))


def _as_points(y, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or (y.ndim == 1 and dim > 1):
        y = y.reshape(-1, dim)
    elif y.ndim == 1:
        y = y[:, None]
    if y.shape[-1] != dim:
        raise DomainMismatch(f"points must have trailing dimension {dim}")
    return y


def mixture_logpdf(Q: DiscreteMeasure, kernel: KernelModel, y) -> np.ndarray:
    """``log (Q * f)(y)`` for points ``y`` of shape (..., d)."""
    if kernel.dim != Q.dim:
        raise DomainMismatch("kernel and measure dimensions differ")
    y = np.asarray(y, dtype=float)
    if y.ndim == 1 and Q.dim == 1:
        y = y[:, None]
    L = kernel.logpdf(y[..., None, :] - Q.locations)
    with np.errstate(divide="ignore"):
        return logsumexp(L + np.log(Q.weights), axis=-1)


def mixture_density(Q: DiscreteMeasure, kernel: KernelModel, y) -> np.ndarray:
    """``(Q * f)(y) = sum_i w_i f(y - theta_i)``."""
    return np.exp(mixture_logpdf(Q, kernel, y))


# ---------------------------------------------------------------------------
# Marginal likelihood of exchangeable groups
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginalLoglik:
    value: float
    stderr: float
    n_mc: int


def marginal_loglik(
    G: DiscreteMeasure,
    alpha: float,
    kernel: KernelModel,
    y_vec,
    n_mc: int,
    trunc: StickBreakingTruncation,
    seed: int,
) -> MarginalLoglik:
    """Monte Carlo ``log p(y_1..y_n | G)`` with ``Q ~ D_alpha G``.

    Averages ``prod_j (Q * f)(y_j)`` over ``n_mc`` truncated stick-breaking
    draws in log space.  The standard error is the delta-method value for the
    log of the mean.
    """
    y = _as_points(y_vec, G.dim) if np.size(y_vec) else np.zeros((0, G.dim))
    if len(y) == 0:
        return MarginalLoglik(0.0, 0.0, int(n_mc))
    if G.size == 1:  # Q = G almost surely
        return MarginalLoglik(float(kernel.logpdf(y - G.locations[0]).sum()), 0.0, int(n_mc))
    masses, _ = sample_dp_masses(alpha, G.weights, trunc.k, int(n_mc), stream(seed, "marginal"))
    L = kernel.logpdf(y[:, None, :] - G.locations)  # (n, K)
    with np.errstate(divide="ignore"):
        logq = np.log(masses)  # (S, K)
    ell = logsumexp(logq[:, None, :] + L[None, :, :], axis=-1).sum(axis=1)  # (S,)
    if not np.any(np.isfinite(ell)):
        raise NumericalUnderflow("every Monte Carlo term is zero")
    top = ell.max()
    w = np.exp(ell - top)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(len(w)) / mean if len(w) > 1 else 0.0
    return MarginalLoglik(float(top + math.log(mean)), float(se), int(n_mc))


def _log_dirichlet_moments(alpha_beta: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """``log E prod_j q_{z_j}`` under ``Dir(alpha_beta)`` for label rows ``Z``."""
    K = len(alpha_beta)
    counts = np.stack([(Z == i).sum(axis=1) for i in range(K)], axis=1)
    a0 = alpha_beta.sum()
    n = Z.shape[1]
    return (
        gammaln(a0)
        - gammaln(a0 + n)
        + np.sum(gammaln(alpha_beta + counts) - gammaln(alpha_beta), axis=1)
    )


def marginal_logpdf_exact(G: DiscreteMeasure, alpha: float, kernel: KernelModel, Y, max_terms: int = 200_000) -> np.ndarray:
    """Exact ``log p(Y | G)`` for finite ``G`` by summing over label assignments.

    ``p(y_1..y_n | G) = sum_z E[prod_j q_{z_j}] prod_j f(y_j - theta_{z_j})``
    with Dirichlet moments in closed form.  The sum has ``|G|^n`` terms, so
    this is meant for small groups only.

    Parameters
    ----------
    Y : ndarray, shape (B, n, d) or (n, d)
        One or more groups of ``n`` observations.
    """
    Y = np.asarray(Y, dtype=float)
    single = Y.ndim == 2
    if single:
        Y = Y[None]
    B, n, d = Y.shape
    if d != G.dim:
        raise DomainMismatch("observation and measure dimensions differ")
    K = G.size
    if K**n > max_terms:
        raise InvalidParameter(f"{K}^{n} assignments exceed max_terms={max_terms}")
    Z = np.array(list(itertools.product(range(K), repeat=n)), dtype=int).reshape(-1, n)
    logmom = _log_dirichlet_moments(alpha * G.weights, Z)  # (T,)
    L = kernel.logpdf(Y[:, :, None, :] - G.locations)  # (B, n, K)
    out = np.empty(B)
    chunk = max(1, 2_000_000 // max(1, len(Z) * n))
    for s in range(0, B, chunk):
        Lb = L[s : s + chunk]
        terms = Lb[:, np.arange(n)[None, :], Z].sum(axis=-1)  # (b, T)
        out[s : s + chunk] = logsumexp(terms + logmom, axis=1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Divergences
# ---------------------------------------------------------------------------


class DensitySpec(Protocol):
    event_shape: tuple

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def logpdf(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class MixtureSpec:
    """The mixture density ``Q * f`` as a samplable, evaluable law."""

    Q: DiscreteMeasure
    kernel: KernelModel

    @property
    def event_shape(self) -> tuple:
        return (self.Q.dim,)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.Q.size, size=n, p=self.Q.weights)
        return self.Q.locations[idx] + self.kernel.sample_noise(rng, n)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return mixture_logpdf(self.Q, self.kernel, x)


@dataclass(frozen=True)
class MarginalSpec:
    """Law of one group ``Y_1..Y_n`` under ``Q ~ D_alpha G``, ``Y_j ~ Q * f``."""

    G: DiscreteMeasure
    alpha: float
    kernel: KernelModel
    n: int

    @property
    def event_shape(self) -> tuple:
        return (self.n, self.G.dim)

    def sample(self, B: int, rng: np.random.Generator) -> np.ndarray:
        masses = dirichlet_masses(self.alpha, self.G, B, rng)
        u = rng.random((B, self.n, 1))
        cdf = np.cumsum(masses, axis=1)[:, None, :]
        idx = np.minimum((u > cdf).sum(axis=-1), self.G.size - 1)
        noise = self.kernel.sample_noise(rng, B * self.n).reshape(B, self.n, self.G.dim)
        return self.G.locations[idx] + noise

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return marginal_logpdf_exact(self.G, self.alpha, self.kernel, x)


@dataclass(frozen=True)
class DivergenceEstimate:
    """Monte Carlo divergence; ``value`` is clipped into the valid range.

    ``Hellinger`` is the squared distance ``1 - int sqrt(p q)``; ``ChiSq`` is
    ``int p^2 / q - 1``.  ``raw`` keeps the unclipped Monte Carlo mean.
    """

    kind: str
    value: float
    stderr: float
    n_mc: int
    raw: float = field(default=float("nan"))


DIVERGENCES = ("KL", "K2", "Hellinger", "TV", "ChiSq")


def _mean_se(x: np.ndarray):
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def estimate_divergence(kind: str, P, Q, n_mc: int, seed: int) -> DivergenceEstimate:
    """Monte Carlo estimate of a divergence between two density specs.

    KL, K2, Hellinger and chi-square sample from ``P``; TV samples half from
    ``P`` and half from ``Q``, i.e. from their equal mixture.
    """
    if kind not in DIVERGENCES:
        raise InvalidParameter(f"unknown divergence {kind!r}")
    if tuple(P.event_shape) != tuple(Q.event_shape):
        raise DomainMismatch("specs have different event shapes")
    rng = stream(seed, "divergence", kind)
    if kind == "TV":
        half = max(2, n_mc // 2)
        xp, xq = P.sample(half, rng), Q.sample(half, rng)
        gp = np.abs(np.tanh(0.5 * (P.logpdf(xp) - Q.logpdf(xp))))
        gq = np.abs(np.tanh(0.5 * (P.logpdf(xq) - Q.logpdf(xq))))
        mp, sp = _mean_se(gp)
        mq, sq = _mean_se(gq)
        raw, se = 0.5 * (mp + mq), 0.5 * math.hypot(sp, sq)
        return DivergenceEstimate(kind, min(max(raw, 0.0), 1.0), se, 2 * half, raw)
    x = P.sample(n_mc, rng)
    lr = P.logpdf(x) - Q.logpdf(x)
    if kind == "KL":
        raw, se = _mean_se(lr)
        hi = math.inf
    elif kind == "K2":
        raw, se = _mean_se(lr**2)
        hi = math.inf
    elif kind == "Hellinger":
        m, se = _mean_se(np.exp(-0.5 * lr))
        raw, hi = 1.0 - m, 1.0
    else:
        m, se = _mean_se(np.exp(lr))
        raw, hi = m - 1.0, math.inf
    return DivergenceEstimate(kind, min(max(raw, 0.0), hi), se, int(n_mc), raw)


def kl_lipschitz_constant(kernel: KernelModel, lower, upper, r: float = 2.0, grid: int = 9, quad_points: int = 4001) -> float:
    """Measured ``sup K(f_theta, f_theta') / ||theta - theta'||^r`` over a grid.

    The one-dimensional KL divergences are computed by trapezoid quadrature
    on a wide grid and summed over coordinates (product kernel); ``theta``
    ranges over a ``grid``-point lattice of the box ``[lower, upper]``.
    """
    lo = np.atleast_1d(np.asarray(lower, float))
    hi = np.atleast_1d(np.asarray(upper, float))
    h = kernel.bandwidth
    span = float(np.max(hi - lo))
    width = span + (40 * h if kernel.family != "cauchy" else 4000 * h)
    x = np.linspace(-width, width, quad_points * (1 if kernel.family != "cauchy" else 20))
    lp0 = kernel.logpdf_1d(x)
    p0 = np.exp(lp0)
    shifts = np.unique(np.abs(np.subtract.outer(np.linspace(0, span, grid), np.linspace(0, span, grid))).ravel())
    shifts = shifts[shifts > 0]
    kl_1d = {}
    for s in shifts:
        lp1 = kernel.logpdf_1d(x - s)
        with np.errstate(invalid="ignore"):
            integrand = np.where(p0 > 0, p0 * (lp0 - lp1), 0.0)
        kl_1d[s] = float(np.trapezoid(integrand, x))
    best = 0.0
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(kernel.dim)]
    pts = np.array(list(itertools.product(*axes)))
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            delta = np.abs(pts[a] - pts[b])
            dist = float(np.linalg.norm(delta))
            kl = 0.0
            for s in delta:
                if s > 0:
                    key = shifts[np.argmin(np.abs(shifts - s))]
                    kl += kl_1d[key]
            best = max(best, kl / dist**r)
    return best


# ---------------------------------------------------------------------------
# Smoothness classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessClass:
    kind: str
    beta: float
    fit_diagnostics: dict


def _log_integral_closed_form(kernel: KernelModel, X: np.ndarray) -> np.ndarray | None:
    """``log int_{-X}^{X} fhat^-2`` for the one-dimensional factor."""
    h = kernel.bandwidth
    t = h * X
    if kernel.family == "gaussian":
        return math.log(2.0 / h) + t * t + np.log(dawsn(t))
    if kernel.family == "laplace":
        return np.log(2.0 * (X + 2.0 * h * h * X**3 / 3.0 + h**4 * X**5 / 5.0))
    if kernel.family == "cauchy":
        return 2.0 * t + np.log1p(-np.exp(-2.0 * t)) - math.log(h)
    return None


def _log_integral_quadrature(kernel: KernelModel, X: float, points: int = 200_001) -> float:
    """Log-space trapezoid rule for ``log int_{-X}^{X} fhat^-2``."""
    w = np.linspace(0.0, X, points)
    fh = kernel.fourier_1d(w)
    if np.any(fh <= 0):
        raise KernelNotInvertible("Fourier transform vanishes on the grid")
    g = -2.0 * np.log(fh)
    dx = w[1] - w[0]
    ends = np.array([g[0], g[-1]])
    inner = logsumexp(g[1:-1]) if points > 2 else -np.inf
    total = np.logaddexp(inner, logsumexp(ends) - math.log(2.0))
    return float(math.log(2.0 * dx) + total)


def log_fourier_integral(kernel: KernelModel, delta, method: str = "auto") -> np.ndarray:
    """``log I(delta)`` with ``I(delta) = int_{[-1/delta, 1/delta]^d} fhat^-2``."""
    X = 1.0 / np.atleast_1d(np.asarray(delta, float))
    if kernel.family == "triangular":
        zeros = 2 * np.pi / kernel.bandwidth
        if np.any(X >= zeros):
            raise KernelNotInvertible("triangular kernel transform vanishes at 2*pi/h")
    closed = _log_integral_closed_form(kernel, X) if method in ("auto", "closed") else None
    if closed is None:
        closed = np.array([_log_integral_quadrature(kernel, float(x)) for x in X])
    return kernel.dim * closed


def _linfit(x: np.ndarray, y: np.ndarray):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


def classify_smoothness(kernel: KernelModel, delta_grid=None, r2_min: float = 0.95, beta_range=(0.5, 4.0)) -> SmoothnessClass:
    """Classify a kernel as ordinary smooth or supersmooth.

    Fits ``log I`` against ``log(1/delta)`` (ordinary: slope ``2 d beta``)
    and against ``delta^-beta`` (supersmooth, ``beta`` by profile search over
    ``beta_range``) and keeps the fit with the larger R^2.  Exponents below
    ``beta_range[0]`` are excluded: on a finite grid ``delta^-beta`` with a
    tiny ``beta`` is indistinguishable from ``log(1/delta)``.
    """
    if delta_grid is None:
        delta_grid = kernel.bandwidth / np.logspace(1.0, 3.0, 13)
    delta = np.sort(np.asarray(delta_grid, float))[::-1]
    logI = log_fourier_integral(kernel, delta)
    u = np.log(1.0 / delta)
    slope, icpt, r2_ord = _linfit(u, logI)
    beta_ord = slope / (2 * kernel.dim)

    betas = np.linspace(beta_range[0], beta_range[1], 351)
    r2s = np.array([_linfit((1.0 / delta) ** b, logI)[2] for b in betas])
    i = int(np.argmax(r2s))
    lo_b, hi_b = betas[max(i - 1, 0)], betas[min(i + 1, len(betas) - 1)]
    fine = np.linspace(lo_b, hi_b, 201)
    r2f = np.array([_linfit((1.0 / delta) ** b, logI)[2] for b in fine])
    beta_sup, r2_sup = float(fine[np.argmax(r2f)]), float(r2f.max())

    diag = {
        "r2_ordinary": r2_ord,
        "beta_ordinary": beta_ord,
        "r2_supersmooth": r2_sup,
        "beta_supersmooth": beta_sup,
        "delta_grid": delta.tolist(),
        "log_I": logI.tolist(),
    }
    if max(r2_ord, r2_sup) < r2_min:
        return SmoothnessClass("unclassified", float("nan"), diag)
    if r2_ord >= r2_sup:
        return SmoothnessClass("ordinary", beta_ord, diag)
    return SmoothnessClass("supersmooth", beta_sup, diag)
