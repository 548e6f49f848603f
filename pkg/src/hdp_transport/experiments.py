"""Seeded Monte Carlo experiments with machine-checkable verdicts.

Every experiment is a pure function of its resolved configuration: defaults
are merged into the user's parameters and the merged dictionary is recorded,
hashed and replayable.  Random numbers come from :func:`~hdp_transport.rng.stream`
keyed by the root seed and fixed labels, never from the clock.

Verdict identifiers ``C1`` .. ``C11`` refer to the acceptance checklist in
the README; other identifiers (``thickness``, ``small-ball-monotone`` ...)
are auxiliary checks.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import gammaln

from .deconvolution import DemixConfig, demix_rate_curve, eta_mle, plug_in_base_estimate, weights_only_mle
from .errors import InvalidParameter, UnknownExperiment
from .hierarchy import identity_bracket
from .kernels import KernelModel, MarginalSpec, estimate_divergence, kl_lipschitz_constant, mixture_density
from .oracles import brute_force_transport
from .random_measures import (
    StickBreakingTruncation,
    UniformBoxSampler,
    dirichlet_masses,
    stick_breaking,
    tail_bound_is_valid,
    tail_mass_bound,
)
from .regularity import (
    build_test_set,
    regularity_exponent_fit,
    sparse_tube_report,
    test_set_from_params,
    variational_gap,
)
from .rng import key_of, stream
from .sparse_geometry import SupportSpec, box_packing_number, classify_sparsity, sparsity_profile
from .transport import BoundedDomain, DiscreteMeasure, cost_matrix, measure_from_any, wasserstein, wasserstein_1d_batch

__all__ = [
    "EXPERIMENTS",
    "DEFAULTS",
    "Verdict",
    "ExperimentConfig",
    "ExperimentRecord",
    "run_experiment",
    "small_ball_check",
    "thickness_check",
    "borrow_strength_experiment",
    "base_measure_experiment",
    "contraction_experiment",
    "hellinger_quadrature",
    "beta_tv",
    "canonical_json",
]

Z99 = float(stats.norm.ppf(0.99))

PASS, FAIL, SKIPPED, INCONCLUSIVE = "pass", "fail", "skipped", "inconclusive"


# ---------------------------------------------------------------------------
# Canonical serialisation
# ---------------------------------------------------------------------------


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def _sha256(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Config and record
# ---------------------------------------------------------------------------


def _unit_measure(locs, w) -> dict:
    return DiscreteMeasure(BoundedDomain.unit(1), np.asarray(locs, float)[:, None], w).to_json()


DEFAULTS: dict[str, dict] = {
    "identity": {
        "ot_instances": 200,
        "max_atoms": 5,
        "max_dim": 3,
        "r_values": [1, 2],
        "bracket_pairs": 10,
        "bracket_max_atoms": 4,
        "bracket_max_dim": 2,
        "alpha": 0.7,
        "n": 2000,
        "tail_target": 1e-4,
        "n_boot": 200,
        "pair": None,
    },
    "tail": {
        "alphas": [0.5, 1.0, 2.0],
        "pairs": [[5, 0.05], [10, 0.01], [20, 0.001]],
        "n_mc": 100_000,
    },
    "kl-bound": {
        "pairs": 20,
        "max_atoms": 4,
        "n_values": [1, 2, 4],
        "alpha": 1.0,
        "r": 2,
        "kernel": {"family": "gaussian", "bandwidth": 0.3, "dim": 1},
        "theta_grid": 9,
        "n_mc": 2000,
    },
    "small-ball": {
        "G0": _unit_measure([0.25, 0.75], [0.5, 0.5]),
        "gamma": 1.0,
        "eps": 0.2,
        "r": 1,
        "n_mc": 100_000,
        "trunc_eps": 0.001,
        "eps_grid": [0.5, 0.3, 0.2, 0.15, 0.1],
    },
    "thickness": {
        "G0": _unit_measure([0.25, 0.75], [0.5, 0.5]),
        "gamma": 1.0,
        "alpha": 1.0,
        "kernel": {"family": "gaussian", "bandwidth": 0.3, "dim": 1},
        "delta": 0.5,
        "n": 2,
        "r": 2,
        "n_G": 200,
        "n_mc": 500,
        "trunc_eps": 0.01,
        "guard_constant": 1.0,
    },
    "tube": {
        "case_b": {"atoms": [[0.0], [1.0]], "params": [0.3, 0.7], "params_p": [1e-4, 0.9999]},
        "case_a_matched": {"atoms": [[0.0], [1.0]], "params": [1.2, 2.8], "params_p": [0.004, 3.996]},
        "case_a_k3": {"atoms": [[0.0], [0.5], [1.0]], "params": [1.2, 1.5, 2.0], "params_p": [2.0, 1.5, 1.2]},
        "r": 1,
        "delta_grid": [1e-6, 6.30957e-6, 3.98107e-5, 2.51189e-4, 1.58489e-3, 1e-2],
        "delta_grid_k3": [1e-4, 2.51189e-4, 6.30957e-4, 1.58489e-3, 3.98107e-3, 1e-2],
        "n_mc": 1_000_000,
        "n_mc_k3": 100_000,
        "gap_pairs": 10,
        "gap_n_mc": 100_000,
        "sparse": {"dyadic_gamma1": 2.0, "dyadic_levels": 200, "cantor_level": 12},
        "sparse_tube": {"cantor_level": 6, "eps_grid": [0.1667, 0.0556, 0.0185], "alpha": 3.0, "alphap": 3.0, "n_mc": 20_000},
    },
    "demix-rate": {
        "Q0": DiscreteMeasure(BoundedDomain((-2.0,), (2.0,)), [[-1.0], [1.0]], [0.5, 0.5]).to_json(),
        "kernels": [{"family": "gaussian", "bandwidth": 0.3, "dim": 1}],
        "n_grid": [250, 1000, 4000],
        "reps": 25,
        "k_max": 2,
        "restarts": 4,
        "r": 2,
        "contraction": None,
    },
    "borrow-strength": {
        "base": {
            "G0": _unit_measure(np.linspace(0.1, 0.9, 6), np.full(6, 1 / 6)),
            "alpha": 1.0,
            "kernel": {"family": "gaussian", "bandwidth": 0.04, "dim": 1},
            "m_grid": [5, 40],
            "n": 2000,
            "reps": 25,
            "merge_radius": 0.05,
            "restarts": 2,
        },
        "borrow": {
            "G0": _unit_measure([0.1, 0.5, 0.9], [0.3, 0.4, 0.3]),
            "alpha": 1.0,
            "kernel": {"family": "gaussian", "bandwidth": 0.1, "dim": 1},
            "m": 40,
            "n": 2000,
            "n_tilde_grid": [50, 2000],
            "reps": 25,
            "merge_radius": 0.1,
            "restarts": 2,
        },
    },
}

EXPERIMENTS = tuple(DEFAULTS)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    output_path: str | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in DEFAULTS:
            raise UnknownExperiment(self.experiment)
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidParameter("seed must be a nonnegative integer")

    def resolved(self) -> dict:
        """Parameters with every default filled in."""
        return _merge(DEFAULTS[self.experiment], self.params)

    def config_hash(self) -> str:
        return _sha256({"experiment": self.experiment, "params": self.resolved(), "seed": int(self.seed)})

    @classmethod
    def from_json(cls, obj: dict, **overrides) -> ExperimentConfig:
        fields = {
            "experiment": obj.get("experiment"),
            "params": obj.get("params", {}),
            "output_path": obj.get("output_path"),
            "seed": obj.get("seed", 0),
        }
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)

    @classmethod
    def load(cls, path: str, **overrides) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_json(json.load(fh), **overrides)


@dataclass(frozen=True)
class Verdict:
    criterion: str
    status: str
    margin: float
    detail: str = ""

    def to_json(self) -> dict:
        return {"criterion": self.criterion, "status": self.status, "margin": self.margin, "detail": self.detail}


@dataclass
class ExperimentRecord:
    experiment: str
    config: dict
    seed: int
    config_hash: str
    tables: dict
    verdicts: list
    runtime_s: float = float("nan")

    def body(self) -> dict:
        """Everything that is hashed (wall-clock time is excluded)."""
        return {
            "experiment": self.experiment,
            "config": self.config,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "tables": self.tables,
            "verdicts": [v.to_json() for v in self.verdicts],
        }

    @property
    def record_hash(self) -> str:
        return _sha256(self.body())

    @property
    def passed(self) -> bool:
        return all(v.status != FAIL for v in self.verdicts)

    def verdict(self, criterion: str) -> Verdict:
        for v in self.verdicts:
            if v.criterion == criterion:
                return v
        raise KeyError(criterion)

    def to_json(self) -> dict:
        out = _plain(self.body())
        out["record_hash"] = self.record_hash
        out["runtime_s"] = _plain(self.runtime_s)
        return out

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for name, rows in self.tables.items():
            if not rows:
                continue
            cols = list(rows[0].keys())
            with open(os.path.join(out_dir, f"{self.experiment}_{name}.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols)
                w.writeheader()
                for row in rows:
                    w.writerow(_plain(row))
        with open(os.path.join(out_dir, f"{self.experiment}_record.json"), "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def _pmap(fn: Callable, items, threads: int) -> list:
    """Ordered map; results are reduced in input order whatever the thread count."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


def _random_measure(rng, max_atoms: int, dim: int) -> DiscreteMeasure:
    k = int(rng.integers(1, max_atoms + 1))
    return DiscreteMeasure(BoundedDomain.unit(dim), rng.random((k, dim)), rng.dirichlet(np.ones(k)))


# ---------------------------------------------------------------------------
# identity: exact OT and the Dirichlet identity bracket
# ---------------------------------------------------------------------------


def _exp_identity(p: dict, seed: int, threads: int):
    rng = stream(seed, "identity", "ot")
    ot_rows = []
    for s in range(int(p["ot_instances"])):
        d = int(rng.integers(1, p["max_dim"] + 1))
        G = _random_measure(rng, p["max_atoms"], d)
        Gp = _random_measure(rng, p["max_atoms"], d)
        r = float(p["r_values"][s % len(p["r_values"])])
        solver = wasserstein(G, Gp, r).distance ** r
        oracle = brute_force_transport(G.weights, Gp.weights, cost_matrix(G.locations, Gp.locations, r))
        rel = abs(solver - oracle) / max(abs(oracle), 1e-300)
        ot_rows.append({"instance": s, "m": G.size, "n": Gp.size, "d": d, "r": r, "solver": solver, "oracle": oracle, "rel_err": rel})
    worst = max(r["rel_err"] for r in ot_rows) if ot_rows else 0.0
    verdicts = [Verdict("C1", PASS if worst <= 1e-9 else FAIL, 1e-9 - worst, f"max relative error {worst:.3e}")]

    rng = stream(seed, "identity", "bracket")
    jobs = []
    for s in range(int(p["bracket_pairs"])):
        d = int(rng.integers(1, p["bracket_max_dim"] + 1))
        G = _random_measure(rng, p["bracket_max_atoms"], d)
        Gp = _random_measure(rng, p["bracket_max_atoms"], d)
        for r in p["r_values"]:
            jobs.append((f"random-{s}", G, Gp, float(r)))
    if p.get("pair"):
        G = measure_from_any(p["pair"]["G"])
        Gp = measure_from_any(p["pair"]["Gp"])
        for r in p["r_values"]:
            jobs.append(("pair", G, Gp, float(r)))

    def bracket(job):
        name, G, Gp, r = job
        trunc = StickBreakingTruncation.for_tolerance(p["alpha"], 0.01**r, p["tail_target"])
        b = identity_bracket(G, Gp, p["alpha"], r, int(p["n"]), trunc, _sub_seed(seed, key_of(name), int(r)), int(p["n_boot"]))
        return {"pair": name, "r": r, "d": G.dim, "k": b.k, "target": b.target, "lower": b.lower, "lower_se": b.lower_se, "upper": b.upper, "upper_se": b.upper_se, "holds": b.holds}

    br_rows = _pmap(bracket, jobs, threads)
    rand = [r for r in br_rows if r["pair"] != "pair"]
    margin = min(
        min(r["target"] - (r["lower"] - 3 * r["lower_se"]), r["upper"] + 3 * r["upper_se"] - r["target"]) for r in rand
    ) if rand else 0.0
    verdicts.append(Verdict("C2", PASS if all(r["holds"] for r in rand) else FAIL, margin, f"{sum(r['holds'] for r in rand)}/{len(rand)} brackets hold"))
    user = [r for r in br_rows if r["pair"] == "pair"]
    if user:
        ok = all(r["holds"] for r in user)
        verdicts.append(Verdict("identity-pair", PASS if ok else FAIL, min(r["upper"] - r["target"] for r in user), "user-supplied pair"))
    return {"ot": ot_rows, "bracket": br_rows}, verdicts


# ---------------------------------------------------------------------------
# tail: stick-breaking tail mass
# ---------------------------------------------------------------------------


def _exp_tail(p: dict, seed: int, threads: int):
    jobs = [(float(a), int(k), float(e)) for a in p["alphas"] for k, e in p["pairs"]]
    N = int(p["n_mc"])

    def one(job):
        a, k, e = job
        _, tail = stick_breaking(a, k, stream(seed, "tail", f"{a}-{k}-{e}"), size=N)
        hits = int((tail >= e).sum())
        phat = hits / N
        se = math.sqrt(max(phat * (1 - phat), 1.0 / N) / N)
        bound = tail_mass_bound(e, k, a)
        return {"alpha": a, "k": k, "eps": e, "empirical": phat, "stderr": se, "bound": bound, "valid_regime": tail_bound_is_valid(e, k, a), "ok": phat - Z99 * se <= bound}

    rows = _pmap(one, jobs, threads)
    margin = min(r["bound"] - r["empirical"] for r in rows)
    status = PASS if all(r["ok"] for r in rows) else FAIL
    return {"tail": rows}, [Verdict("C3", status, margin, f"{sum(r['ok'] for r in rows)}/{len(rows)} grid points")]


# ---------------------------------------------------------------------------
# kl-bound: KL between marginals against C1 n W_r^r
# ---------------------------------------------------------------------------


def _exp_kl_bound(p: dict, seed: int, threads: int):
    kernel = KernelModel.from_json(p["kernel"])
    r = float(p["r"])
    C1 = kl_lipschitz_constant(kernel, [0.0] * kernel.dim, [1.0] * kernel.dim, r, int(p["theta_grid"]))
    rng = stream(seed, "kl-bound", "pairs")
    jobs = []
    for s in range(int(p["pairs"])):
        G = _random_measure(rng, p["max_atoms"], kernel.dim)
        Gp = _random_measure(rng, p["max_atoms"], kernel.dim)
        for n in p["n_values"]:
            jobs.append((s, G, Gp, int(n)))

    def one(job):
        s, G, Gp, n = job
        wr = wasserstein(G, Gp, r).distance ** r
        P = MarginalSpec(G, p["alpha"], kernel, n)
        Q = MarginalSpec(Gp, p["alpha"], kernel, n)
        est = estimate_divergence("KL", P, Q, int(p["n_mc"]), _sub_seed(seed, s, n))
        bound = C1 * n * wr
        return {"pair": s, "n": n, "W_r^r": wr, "kl": est.raw, "stderr": est.stderr, "bound": bound, "ok": est.raw <= bound + 3 * est.stderr}

    rows = _pmap(one, jobs, threads)
    margin = min(r["bound"] + 3 * r["stderr"] - r["kl"] for r in rows)
    status = PASS if all(r["ok"] for r in rows) else FAIL
    return {"kl": rows, "constant": [{"C1": C1, "r": r}]}, [Verdict("C4", status, margin, f"C1={C1:.4g}")]


# ---------------------------------------------------------------------------
# small-ball
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmallBallResult:
    empirical: float
    stderr: float
    bound: float
    log_bound: float
    packing: int
    status: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def small_ball_log_bound(domain: BoundedDomain, gamma: float, eps: float, r: float, eta0: float) -> tuple[float, int]:
    """Log of the product lower bound on ``P(W_r^r(G0, G) <= (2^r + 1) eps^r)``.

    ``D`` is the box packing number and each of the ``D`` packing balls of
    radius ``eps/2`` is credited with ``H``-mass ``eta0 (eps / (2 sqrt d))^d``,
    the volume of a cube inside the ball's intersection with the box.
    """
    D = box_packing_number(domain, eps)
    d = domain.dim
    logH = math.log(eta0) + d * math.log(eps / (2 * math.sqrt(d)))
    val = (
        gammaln(gamma)
        + D * math.log(gamma)
        - (D - 1) * math.log(2 * D)
        + r * (D - 1) * math.log(eps / domain.diameter)
        + D * logH
    )
    return float(val), int(D)


def small_ball_check(G0: DiscreteMeasure, gamma: float, H_spec, eps: float, r: float, n_mc: int, trunc: StickBreakingTruncation, seed: int) -> SmallBallResult:
    """Empirical small-ball probability of ``G ~ D_gamma H`` against the product bound.

    ``H_spec`` must be a :class:`UniformBoxSampler`; its density floor is
    ``eta0 = 1 / vol``.  Passing means the empirical probability is not below
    the bound at one-sided 99% confidence.  A bound that underflows to zero is
    reported as skipped.
    """
    if not isinstance(H_spec, UniformBoxSampler):
        raise InvalidParameter("small_ball_check needs a uniform box base")
    dom = H_spec.domain
    if G0.dim != 1 or dom.dim != 1:
        raise InvalidParameter("small_ball_check is implemented for d = 1")
    log_b, D = small_ball_log_bound(dom, gamma, eps, r, 1.0 / dom.volume)
    sticks, atoms = stream(seed, "small-ball", "sticks"), stream(seed, "small-ball", "atoms")
    p, _ = stick_breaking(gamma, trunc.k, sticks, size=int(n_mc))
    locs = H_spec.sample(atoms, (int(n_mc), trunc.k))[..., 0]
    w = wasserstein_1d_batch(locs, p, G0.locations[:, 0], G0.weights, r) ** r
    hits = w <= (2**r + 1) * eps**r * (1 + 1e-12)
    phat = float(hits.mean())
    se = math.sqrt(max(phat * (1 - phat), 1.0 / n_mc) / n_mc)
    bound = math.exp(log_b)
    if bound == 0.0:
        status = SKIPPED
    else:
        status = PASS if phat + Z99 * se >= bound else FAIL
    return SmallBallResult(phat, se, bound, log_b, D, status)


def _exp_small_ball(p: dict, seed: int, threads: int):
    G0 = measure_from_any(p["G0"])
    H = UniformBoxSampler(G0.domain)
    trunc = StickBreakingTruncation.for_tolerance(p["gamma"], p["trunc_eps"])
    res = small_ball_check(G0, p["gamma"], H, p["eps"], p["r"], int(p["n_mc"]), trunc, seed)
    rows = [{"eps": p["eps"], **res.to_json(), "k": trunc.k}]
    grid = sorted(p["eps_grid"], reverse=True)
    bounds = [small_ball_log_bound(G0.domain, p["gamma"], e, p["r"], 1.0 / G0.domain.volume) for e in grid]
    mono = [{"eps": e, "log_bound": lb, "packing": D} for e, (lb, D) in zip(grid, bounds)]
    decreasing = all(b[0] >= a[0] for a, b in zip(bounds[1:], bounds[:-1]))
    verdicts = [
        Verdict("C5", res.status, res.empirical - res.bound, f"empirical {res.empirical:.4g} vs bound {res.bound:.3e}"),
        Verdict("small-ball-monotone", PASS if decreasing else FAIL, 0.0, "bound decreases with eps"),
    ]
    return {"small_ball": rows, "bound_grid": mono}, verdicts


# ---------------------------------------------------------------------------
# thickness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThicknessResult:
    hits: int
    n_G: int
    log_empirical: float
    log_lower99: float
    log_bound: float
    D: int
    guard_ok: bool
    status: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def thickness_log_bound(domain: BoundedDomain, gamma: float, delta: float, n: int, r: float, c: float = 1.0) -> tuple[float, int]:
    """``c log[gamma^D (delta^2 / n^3)^{(1 + d/r)(D - 1) + D d / r}]`` with
    ``D = ceil(diam^d (n^3 / delta)^{d/r})``."""
    d = domain.dim
    D = int(math.ceil(domain.diameter**d * (n**3 / delta) ** (d / r)))
    expo = (1 + d / r) * (D - 1) + D * d / r
    return float(c * (D * math.log(gamma) + expo * math.log(delta**2 / n**3))), D


def thickness_check(
    G0: DiscreteMeasure,
    gamma: float,
    H_spec,
    delta: float,
    n: int,
    alpha: float,
    kernel: KernelModel,
    r: float = 2.0,
    n_G: int = 200,
    n_mc: int = 500,
    trunc: StickBreakingTruncation | None = None,
    seed: int = 0,
    guard_constant: float = 1.0,
    return_samples: bool = False,
):
    """Monte Carlo ``log P(G in B_K(G0, delta))`` against the thickness bound.

    Membership of a sampled ``G`` means both ``K`` and ``K2`` between the
    marginal laws of ``n`` observations under ``G0`` and under ``G`` are at
    most ``delta^2`` (point estimates).  The verdict compares the one-sided
    99% lower confidence limit of the hit rate with the bound; zero hits is
    inconclusive.
    """
    trunc = trunc or StickBreakingTruncation.for_tolerance(gamma, 0.01)
    log_b, D = thickness_log_bound(H_spec.domain, gamma, delta, n, r)
    guard_ok = n > guard_constant * math.log(1.0 / delta)
    P = MarginalSpec(G0, alpha, kernel, n)
    ks, k2s = [], []
    for s in range(int(n_G)):
        p, _ = stick_breaking(gamma, trunc.k, stream(seed, "thickness", "sticks", s))
        locs = H_spec.sample(stream(seed, "thickness", "atoms", s), trunc.k)
        G = DiscreteMeasure(H_spec.domain, locs, p)
        Q = MarginalSpec(G, alpha, kernel, n)
        ks.append(estimate_divergence("KL", P, Q, n_mc, _sub_seed(seed, s, 1)).raw)
        k2s.append(estimate_divergence("K2", P, Q, n_mc, _sub_seed(seed, s, 2)).raw)
    ks, k2s = np.array(ks), np.array(k2s)
    inside = (ks <= delta**2) & (k2s <= delta**2)
    hits = int(inside.sum())
    if hits == 0:
        res = ThicknessResult(0, int(n_G), -math.inf, -math.inf, log_b, D, guard_ok, INCONCLUSIVE)
    else:
        lo = stats.beta.ppf(0.01, hits, n_G - hits + 1)  # Clopper-Pearson
        res = ThicknessResult(hits, int(n_G), math.log(hits / n_G), float(math.log(lo)), log_b, D, guard_ok, PASS if math.log(lo) >= log_b else FAIL)
    if return_samples:
        return res, ks, k2s
    return res


def _exp_thickness(p: dict, seed: int, threads: int):
    G0 = measure_from_any(p["G0"])
    kernel = KernelModel.from_json(p["kernel"])
    trunc = StickBreakingTruncation.for_tolerance(p["gamma"], p["trunc_eps"])
    res = thickness_check(
        G0, p["gamma"], UniformBoxSampler(G0.domain), p["delta"], int(p["n"]), p["alpha"], kernel,
        p["r"], int(p["n_G"]), int(p["n_mc"]), trunc, seed, p["guard_constant"],
    )
    margin = res.log_lower99 - res.log_bound if res.hits else -math.inf
    return {"thickness": [res.to_json()]}, [Verdict("thickness", res.status, margin, f"{res.hits}/{res.n_G} hits")]


# ---------------------------------------------------------------------------
# tube: regularity exponents, variational gap, sparse geometry
# ---------------------------------------------------------------------------


def beta_tv(a: tuple, b: tuple) -> float:
    """Total variation between ``Beta(a)`` and ``Beta(b)`` from CDF differences.

    The sign changes of the density difference are bracketed on a log-spaced
    grid near both endpoints and refined with Brent's method; the TV is the
    sum of ``F_b - F_a`` over the intervals where ``b`` has the larger density.
    """
    A, B = stats.beta(*a), stats.beta(*b)
    c = gammaln(b[0] + b[1]) - gammaln(b[0]) - gammaln(b[1]) - gammaln(a[0] + a[1]) + gammaln(a[0]) + gammaln(a[1])

    def diff(q):  # log pdf_b - log pdf_a
        return c + (b[0] - a[0]) * math.log(q) + (b[1] - a[1]) * math.log1p(-q)

    half = np.geomspace(1e-300, 0.5, 4000)
    grid = np.unique(np.concatenate([half, 1 - half[half > 1e-16]]))
    vals = np.array([diff(q) for q in grid])
    roots = [brentq(diff, grid[i], grid[i + 1], xtol=1e-300, rtol=1e-15) for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)]
    edges = [0.0, *roots, 1.0]
    tv = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi) if hi - lo > 1e-12 else lo
        if diff(min(max(mid, 1e-300), 1 - 1e-16)) > 0:
            tv += (B.cdf(hi) - B.cdf(lo)) - (A.cdf(hi) - A.cdf(lo))
    return float(tv)


def _fit_case(spec: dict, grid, r, n_mc, seed, label):
    ts = test_set_from_params(spec["atoms"], spec["params"], spec["params_p"])
    fit = regularity_exponent_fit(ts, r=r, delta_grid=grid, n_mc=int(n_mc), seed=_sub_seed(seed, key_of(label)))
    rows = [{"case": label, **e.row()} for e in fit.estimates]
    summary = {"case": label, "exponent": fit.exponent, "r2": fit.r2, "target": fit.target_exponent, "kind": fit.case}
    return fit, rows, summary


def _exp_tube(p: dict, seed: int, threads: int):
    r = float(p["r"])
    fb, rows_b, sb = _fit_case(p["case_b"], p["delta_grid"], r, p["n_mc"], seed, "case_b")
    fa, rows_a, sa = _fit_case(p["case_a_matched"], p["delta_grid"], r, p["n_mc"], seed, "case_a_matched")
    f3, rows_3, s3 = _fit_case(p["case_a_k3"], p["delta_grid_k3"], r, p["n_mc_k3"], seed, "case_a_k3")
    target = fb.target_exponent
    within = abs(fb.exponent - target) <= 0.4 * target and fb.r2 >= 0.9
    ordered = fb.exponent < fa.exponent and fb.exponent < f3.exponent
    verdicts = [
        Verdict("C6", PASS if within and ordered else FAIL, 0.4 * target - abs(fb.exponent - target),
                f"case b slope {fb.exponent:.3f} (R2 {fb.r2:.3f}); case a slopes {fa.exponent:.3f}, {f3.exponent:.3f}"),
        Verdict("tube-case-a", PASS if 0.6 * r <= f3.exponent <= 1.6 * r else FAIL, min(f3.exponent - 0.6 * r, 1.6 * r - f3.exponent), "k=3 slope bracket"),
    ]

    rng = stream(seed, "tube", "gap-pairs")
    gap_rows = []
    for s in range(int(p["gap_pairs"])):
        a = tuple(rng.uniform(0.3, 3.0, size=2))
        b = tuple(rng.uniform(0.3, 3.0, size=2))
        ts = test_set_from_params([[0.0], [1.0]], a, b)
        g = variational_gap(ts, n_mc=int(p["gap_n_mc"]), seed=_sub_seed(seed, 7, s))
        tv = beta_tv(a, b)
        gap_rows.append({"pair": s, "a1": a[0], "a2": a[1], "b1": b[0], "b2": b[1], "gap": g.gap, "stderr": g.stderr, "tv": tv, "ok": abs(g.gap - tv) <= 3 * g.stderr})
    verdicts.append(Verdict("C7", PASS if all(x["ok"] for x in gap_rows) else FAIL,
                            min(3 * x["stderr"] - abs(x["gap"] - x["tv"]) for x in gap_rows), f"{sum(x['ok'] for x in gap_rows)}/{len(gap_rows)} pairs"))

    sp = p["sparse"]
    dy = SupportSpec.dyadic(levels=int(sp["dyadic_levels"]), gamma1=sp["dyadic_gamma1"])
    cl = classify_sparsity(sparsity_profile(dy, np.geomspace(1e-3, 1e-12, 10)))
    ca = SupportSpec.cantor(level=int(sp["cantor_level"]))
    cc = classify_sparsity(sparsity_profile(ca, [3.0**-j / 2 for j in range(2, 11)]))
    ln3 = math.log(2) / math.log(3)
    dy_ok = cl.kind == "supersparse" and abs(cl.gamma0 - 1) <= 0.2 and abs(cl.gamma1 - 2) <= 0.4
    ca_ok = cc.kind == "ordinary" and abs(cc.gamma0 - ln3) <= 0.15 * ln3 and abs(cc.gamma1 - ln3) <= 0.15 * ln3
    sparse_rows = [
        {"support": "dyadic", "kind": cl.kind, "gamma0": cl.gamma0, "gamma1": cl.gamma1, "r2": cl.fit_r2},
        {"support": "cantor", "kind": cc.kind, "gamma0": cc.gamma0, "gamma1": cc.gamma1, "r2": cc.fit_r2},
    ]
    margin = min(0.2 - abs(cl.gamma0 - 1), 0.4 - abs(cl.gamma1 - 2), 0.15 * ln3 - abs(cc.gamma0 - ln3), 0.15 * ln3 - abs(cc.gamma1 - ln3))
    verdicts.append(Verdict("C11", PASS if dy_ok and ca_ok else FAIL, margin, f"dyadic {cl.kind}, cantor {cc.kind}"))

    st = p["sparse_tube"]
    sparse_tube = sparse_tube_report(SupportSpec.cantor(level=int(st["cantor_level"])), st["eps_grid"], st["alpha"], st["alphap"], n_mc=int(st["n_mc"]), seed=seed)
    return {
        "tube": rows_b + rows_a + rows_3,
        "fits": [sb, sa, s3],
        "gap": gap_rows,
        "sparse": sparse_rows,
        "sparse_tube": sparse_tube,
    }, verdicts


# ---------------------------------------------------------------------------
# demix-rate and contraction
# ---------------------------------------------------------------------------


def contraction_experiment(G0: DiscreteMeasure, Gp_family, alpha: float, kernel: KernelModel, n_grid, reps: int = 100, cfg: DemixConfig | None = None, r: float = 2.0, seed: int = 0):
    """Residual ``c0 W_r^r(G0, G') - V_n`` of a demixing-based test.

    For each ``G'`` and ``n``, ``reps`` groups are simulated under ``G0`` and
    under ``G'`` with common random numbers (``Q ~ D_alpha G``, then ``n``
    draws from ``Q * f``), each group is demixed and classified to whichever
    base is closer in ``W_r``.  ``V_n`` is the difference of the two rejection
    rates, a lower estimate of the total variation between the group laws.
    ``c0 = (2 diam)^{-r}``.
    """
    cfg = cfg or DemixConfig(k_max=G0.size, restarts=2)
    c0 = (2 * G0.domain.diameter) ** (-r)
    rows = []
    for g, Gp in enumerate(Gp_family):
        target = c0 * wasserstein(G0, Gp, r).distance ** r
        for n in n_grid:
            stat = {0: [], 1: []}
            for h, G in enumerate((G0, Gp)):
                for rep in range(int(reps)):
                    rng = stream(seed, "contraction", g, int(n), rep)
                    q = dirichlet_masses(alpha, G, 1, rng)[0]
                    Q = DiscreteMeasure(G.domain, G.locations, q)
                    idx = rng.choice(Q.size, size=int(n), p=Q.weights)
                    Y = Q.locations[idx] + kernel.sample_noise(rng, int(n))
                    Qh = eta_mle(Y, kernel, cfg, _sub_seed(seed, g, int(n), rep), G0.domain).Q_hat
                    closer_p = wasserstein(Qh, Gp, r).distance < wasserstein(Qh, G0, r).distance
                    stat[h].append(float(closer_p))
            a, b = np.array(stat[0]), np.array(stat[1])
            V = float(b.mean() - a.mean())
            se = float(math.sqrt((a.var(ddof=1) + b.var(ddof=1)) / reps)) if reps > 1 else 0.0
            rows.append({"family": g, "n": int(n), "c0_wr": target, "V": V, "stderr": se, "residual": target - V})
    return rows


def _exp_demix_rate(p: dict, seed: int, threads: int):
    Q0 = measure_from_any(p["Q0"])
    cfg = DemixConfig(k_max=int(p["k_max"]), restarts=int(p["restarts"]))
    rows = []
    verdicts = []

    def curve(kspec):
        kernel = KernelModel.from_json(kspec)
        return kernel, demix_rate_curve(Q0, kernel, p["n_grid"], int(p["reps"]), cfg, _sub_seed(seed, key_of(kernel.family)), p["r"])

    for kernel, out in _pmap(curve, p["kernels"], threads):
        rows += [{"kernel": kernel.family, "bandwidth": kernel.bandwidth, **row} for row in out]
        if kernel.family == "gaussian" and "C8" not in [v.criterion for v in verdicts]:
            slack = [
                out[i]["mean"] + math.hypot(out[i]["stderr"], out[i + 1]["stderr"]) - out[i + 1]["mean"]
                for i in range(len(out) - 1)
            ]
            verdicts.append(Verdict("C8", PASS if min(slack) >= 0 else FAIL, min(slack), "means nonincreasing up to 1 pooled stderr"))
    tables = {"rate": rows}
    c = p.get("contraction")
    if c:
        G0 = measure_from_any(c["G0"])
        fam = [measure_from_any(g) for g in c["family"]]
        kernel = KernelModel.from_json(c["kernel"])
        crow = contraction_experiment(G0, fam, c["alpha"], kernel, c["n_grid"], int(c["reps"]), DemixConfig(k_max=G0.size, restarts=2), p["r"], seed)
        ok = True
        for g in range(len(fam)):
            sub = [x for x in crow if x["family"] == g]
            for u, v in zip(sub[:-1], sub[1:]):
                ok &= v["residual"] <= u["residual"] + math.hypot(u["stderr"], v["stderr"])
        verdicts.append(Verdict("contraction", PASS if ok else FAIL, 0.0, "residual nonincreasing in n"))
        tables["contraction"] = crow
    return tables, verdicts


# ---------------------------------------------------------------------------
# borrow-strength: base-measure trend and small-group borrowing
# ---------------------------------------------------------------------------


def hellinger_quadrature(P: DiscreteMeasure, Q: DiscreteMeasure, kernel: KernelModel, points: int = 8001) -> float:
    """Hellinger distance ``sqrt(1 - int sqrt(p q))`` between ``P * f`` and ``Q * f`` in d = 1."""
    if kernel.dim != 1:
        raise InvalidParameter("quadrature Hellinger is implemented for d = 1")
    lo = min(P.locations.min(), Q.locations.min())
    hi = max(P.locations.max(), Q.locations.max())
    pad = {"gaussian": 10.0, "laplace": 40.0, "triangular": 1.0, "cauchy": 2000.0}[kernel.family] * kernel.bandwidth
    x = np.linspace(lo - pad, hi + pad, points)
    bc = np.trapezoid(np.sqrt(mixture_density(P, kernel, x) * mixture_density(Q, kernel, x)), x)
    return float(math.sqrt(max(0.0, 1.0 - bc)))


def _simulate_groups(G0: DiscreteMeasure, alpha: float, kernel: KernelModel, m: int, n: int, seed: int):
    masses = dirichlet_masses(alpha, G0, m, stream(seed, "groups", "masses"))
    data = []
    for i in range(m):
        rng = stream(seed, "groups", i)
        idx = rng.choice(G0.size, size=n, p=masses[i])
        data.append(G0.locations[idx] + kernel.sample_noise(rng, n))
    return masses, data


def base_measure_experiment(G0: DiscreteMeasure, alpha: float, kernel: KernelModel, m_grid, n: int, reps: int, seed: int, cfg: DemixConfig | None = None, merge_radius: float = 0.05, threads: int = 1):
    """``W_1(G_hat, G0)`` of the pooled plug-in estimate for nested group counts.

    For each replicate ``max(m_grid)`` groups are simulated and demixed once;
    the estimate for ``m`` pools the first ``m`` of them.
    """
    cfg = cfg or DemixConfig(k_max=G0.size, restarts=2)
    m_grid = sorted(int(m) for m in m_grid)

    def rep_fn(rep):
        s = _sub_seed(seed, rep)
        _, data = _simulate_groups(G0, alpha, kernel, m_grid[-1], n, s)
        fits = [eta_mle(Y, kernel, cfg, _sub_seed(s, i), G0.domain) for i, Y in enumerate(data)]
        out = []
        for m in m_grid:
            Gh = plug_in_base_estimate(fits[:m], merge_radius)
            out.append({"rep": rep, "m": m, "w1": wasserstein(Gh, G0, 1).distance, "atoms": Gh.size})
        return out

    rows = []
    for out in _pmap(rep_fn, range(int(reps)), threads):
        rows += out
    return rows


def borrow_strength_experiment(G0: DiscreteMeasure, alpha: float, kernel: KernelModel, m: int, n: int, n_tilde_grid, reps: int, seed: int, cfg: DemixConfig | None = None, merge_radius: float = 0.1, threads: int = 1):
    """Hellinger error of a small group's mixture density under three arms.

    ``standalone`` demixes the small group with free atoms; ``hierarchical``
    fits weights only on the atoms of the plug-in base estimate from ``m``
    groups of size ``n``; ``oracle`` fits weights on the true atoms of ``G0``.
    """
    cfg = cfg or DemixConfig(k_max=G0.size, restarts=2)

    def rep_fn(rep):
        s = _sub_seed(seed, rep)
        _, data = _simulate_groups(G0, alpha, kernel, m, n, s)
        Gh = plug_in_base_estimate([eta_mle(Y, kernel, cfg, _sub_seed(s, i), G0.domain) for i, Y in enumerate(data)], merge_radius)
        rng = stream(s, "small-group")
        q0 = dirichlet_masses(alpha, G0, 1, rng)[0]
        Q0 = DiscreteMeasure(G0.domain, G0.locations, q0)
        out = []
        for nt in n_tilde_grid:
            r2 = stream(s, "small-group", int(nt))
            idx = r2.choice(Q0.size, size=int(nt), p=Q0.weights)
            Y = Q0.locations[idx] + kernel.sample_noise(r2, int(nt))
            alone = eta_mle(Y, kernel, cfg, _sub_seed(s, 99, int(nt)), G0.domain).Q_hat
            hier = weights_only_mle(Y, kernel, Gh).Q_hat
            orac = weights_only_mle(Y, kernel, G0).Q_hat
            out.append({
                "rep": rep,
                "n_tilde": int(nt),
                "standalone": hellinger_quadrature(alone, Q0, kernel),
                "hierarchical": hellinger_quadrature(hier, Q0, kernel),
                "oracle": hellinger_quadrature(orac, Q0, kernel),
                "G_hat_atoms": Gh.size,
            })
        return out

    rows = []
    for out in _pmap(rep_fn, range(int(reps)), threads):
        rows += out
    return rows


def _summary(rows, key, value):
    out = {}
    for k in sorted({r[key] for r in rows}):
        v = np.array([r[value] for r in rows if r[key] == k])
        out[k] = (float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0, v)
    return out


def _exp_borrow(p: dict, seed: int, threads: int):
    b = p["base"]
    G0 = measure_from_any(b["G0"])
    base_rows = base_measure_experiment(
        G0, b["alpha"], KernelModel.from_json(b["kernel"]), b["m_grid"], int(b["n"]), int(b["reps"]),
        _sub_seed(seed, 1), DemixConfig(k_max=G0.size, restarts=int(b["restarts"])), b["merge_radius"], threads,
    )
    ms = sorted(int(m) for m in b["m_grid"])
    by = _summary(base_rows, "m", "w1")
    wins = int(np.sum(by[ms[-1]][2] < by[ms[0]][2]))
    frac = wins / len(by[ms[0]][2])
    verdicts = [Verdict("C9", PASS if frac >= 0.9 else FAIL, frac - 0.9, f"m={ms[-1]} beats m={ms[0]} in {wins}/{len(by[ms[0]][2])} seeds")]

    c = p["borrow"]
    G0 = measure_from_any(c["G0"])
    rows = borrow_strength_experiment(
        G0, c["alpha"], KernelModel.from_json(c["kernel"]), int(c["m"]), int(c["n"]), c["n_tilde_grid"], int(c["reps"]),
        _sub_seed(seed, 2), DemixConfig(k_max=G0.size, restarts=int(c["restarts"])), c["merge_radius"], threads,
    )
    nt = min(int(x) for x in c["n_tilde_grid"])
    sa = _summary(rows, "n_tilde", "standalone")[nt]
    hi = _summary(rows, "n_tilde", "hierarchical")[nt]
    pooled = math.hypot(sa[1], hi[1])
    gap = sa[0] - hi[0]
    verdicts.append(Verdict("C10", PASS if gap >= pooled else FAIL, gap - pooled, f"n_tilde={nt}: standalone {sa[0]:.4f}, hierarchical {hi[0]:.4f}"))
    return {"base": base_rows, "borrow": rows}, verdicts


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


_RUNNERS = {
    "identity": _exp_identity,
    "tail": _exp_tail,
    "kl-bound": _exp_kl_bound,
    "small-ball": _exp_small_ball,
    "thickness": _exp_thickness,
    "tube": _exp_tube,
    "demix-rate": _exp_demix_rate,
    "borrow-strength": _exp_borrow,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentRecord:
    """Run one experiment; write CSV tables and the JSON record if ``output_path`` is set."""
    if cfg.experiment not in _RUNNERS:
        raise UnknownExperiment(cfg.experiment)
    params = cfg.resolved()
    t0 = time.perf_counter()
    try:
        tables, verdicts = _RUNNERS[cfg.experiment](params, int(cfg.seed), max(1, int(cfg.threads)))
    except Exception as exc:
        # keep the original type so callers can still catch module errors
        exc.args = (f"experiment {cfg.experiment!r}: {exc.args[0] if exc.args else exc}", *exc.args[1:])
        raise
    rec = ExperimentRecord(cfg.experiment, _plain(params), int(cfg.seed), cfg.config_hash(), _plain(tables), verdicts, time.perf_counter() - t0)
    if cfg.output_path:
        rec.write(cfg.output_path)
    return rec
