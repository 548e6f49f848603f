from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from hdp_transport.errors import InvalidParameter, PartitionGap
from hdp_transport.kernels import KernelModel
from hdp_transport.random_measures import (
    StickBreakingTruncation,
    UniformBoxSampler,
    dirichlet_log_density,
    finite_dirichlet_projection,
    log_dirichlet,
    sample_dp,
    sample_dp_masses,
    sample_groups,
    sample_hdp,
    stick_breaking,
    tail_bound_is_valid,
    tail_mass_bound,
)
from hdp_transport.rng import stream
from hdp_transport.transport import BoundedDomain, DiscreteMeasure


class TestStickBreaking:
    def test_single_stick(self, unit1):
        s = sample_dp(1.5, UniformBoxSampler(unit1), StickBreakingTruncation(1, 1.5), seed=4)
        assert s.measure.size == 1
        assert s.measure.weights[0] == 1.0

    @pytest.mark.parametrize("alpha,k", [(0.5, 3), (1.0, 5), (3.0, 10)])
    def test_mean_retained_mass(self, alpha, k):
        _, tail = stick_breaking(alpha, k, stream(7, "retained", k), size=100_000)
        kept = 1.0 - tail
        se = kept.std(ddof=1) / math.sqrt(len(kept))
        assert abs(kept.mean() - (1.0 - (alpha / (alpha + 1.0)) ** k)) <= 3 * se

    def test_dirac_base(self, unit2):
        base = DiscreteMeasure.dirac(unit2, [0.3, 0.6])
        for k in (1, 4, 25):
            s = sample_dp(2.0, base, StickBreakingTruncation(k, 2.0), seed=k)
            assert s.measure == base

    @given(st.floats(0.1, 10.0), st.integers(1, 40), st.integers(0, 10_000))
    def test_weights_form_a_probability_vector(self, alpha, k, seed):
        p, tail = stick_breaking(alpha, k, np.random.default_rng(seed))
        assert p.shape == (k,) and np.all(p >= 0)
        np.testing.assert_allclose(p.sum(), 1.0, rtol=1e-12)
        assert 0 <= tail <= 1

    def test_deterministic(self, unit1):
        t = StickBreakingTruncation(20, 1.0)
        a = sample_dp(1.0, UniformBoxSampler(unit1), t, 11)
        b = sample_dp(1.0, UniformBoxSampler(unit1), t, 11)
        assert a.measure == b.measure and a.realized_tail_mass == b.realized_tail_mass

    def test_invalid_truncation(self):
        with pytest.raises(InvalidParameter):
            StickBreakingTruncation(0, 1.0)
        with pytest.raises(InvalidParameter):
            StickBreakingTruncation(3, -1.0)


class TestTailBound:
    def test_closed_form_value(self):
        np.testing.assert_allclose(tail_mass_bound(math.exp(-math.e), 1, 1.0), math.exp(2 - math.e), rtol=1e-12)
        np.testing.assert_allclose(tail_mass_bound(math.exp(-math.e), 1, 1.0), 0.48759, atol=1e-5)

    @pytest.mark.parametrize("alpha,eps", [(0.5, 0.01), (1.0, 0.001), (2.0, 0.05)])
    def test_nonincreasing_past_threshold(self, alpha, eps):
        k0 = int(math.ceil(math.e * alpha * math.log(1 / eps)))
        vals = [tail_mass_bound(eps, k, alpha) for k in range(k0, k0 + 60)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_monte_carlo(self):
        alpha, k, eps = 1.0, 10, 0.01
        _, tail = stick_breaking(alpha, k, stream(0, "tail-check"), size=100_000)
        p = np.mean(tail >= eps)
        se = math.sqrt(max(p * (1 - p), 1e-12) / len(tail))
        assert p - 2.326 * se <= tail_mass_bound(eps, k, alpha)

    def test_validity_regime(self):
        assert tail_bound_is_valid(0.01, 10, 1.0)
        assert not tail_bound_is_valid(0.01, 4, 1.0)

    def test_for_tolerance(self):
        t = StickBreakingTruncation.for_tolerance(1.0, 0.01, 1e-4)
        assert t.bound < 1e-4
        assert tail_mass_bound(0.01, t.k - 1, 1.0) >= 1e-4 or not tail_bound_is_valid(0.01, t.k - 1, 1.0)

    def test_rejects_bad_eps(self):
        with pytest.raises(InvalidParameter):
            tail_mass_bound(0.5, 3, 1.0)


class TestHDP:
    def test_single_group_single_stick(self, unit1):
        h = sample_hdp(1.0, UniformBoxSampler(unit1), 1.0, 1, StickBreakingTruncation(1, 1.0), seed=2)
        assert h.G.measure.size == 1
        assert h.Qs[0].measure == h.G.measure

    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_shared_atoms(self, seed, m):
        dom = BoundedDomain.unit(2)
        h = sample_hdp(2.0, UniformBoxSampler(dom), 1.0, m, StickBreakingTruncation(15, 1.0), seed)
        top = {tuple(x) for x in h.G.measure.locations}
        for q in h.Qs:
            assert {tuple(x) for x in q.measure.locations} <= top

    def test_group_mean_measure(self, unit1):
        G = DiscreteMeasure(unit1, [0.1, 0.4, 0.8], [0.2, 0.3, 0.5])
        masses, _ = sample_dp_masses(1.0, G.weights, 40, 10_000, stream(3, "mean-measure"))
        se = masses.std(axis=0, ddof=1) / math.sqrt(len(masses))
        assert np.all(np.abs(masses.mean(axis=0) - G.weights) <= 3 * se)

    def test_empirical_box_mass(self, unit1):
        h = sample_hdp(3.0, UniformBoxSampler(unit1), 2.0, 2000, StickBreakingTruncation(30, 2.0), seed=8)
        G = h.G.measure
        for lo, hi in ((0.0, 0.5), (0.25, 0.75)):
            vals = np.array([q.measure.mass_in_box([lo], [hi]) for q in h.Qs])
            se = vals.std(ddof=1) / math.sqrt(len(vals))
            assert abs(vals.mean() - G.mass_in_box([lo], [hi])) <= 3 * se + 1e-12

    def test_tiny_bandwidth_groups_sit_on_atoms(self, unit1):
        h = sample_hdp(1.0, UniformBoxSampler(unit1), 1.0, 3, StickBreakingTruncation(10, 1.0), seed=5)
        h = sample_groups(h, KernelModel("gaussian", 1e-8, 1), 200, seed=6)
        for q, y in zip(h.Qs, h.groups):
            dist = np.abs(y[:, None, 0] - q.measure.locations[None, :, 0]).min(axis=1)
            assert dist.max() < 1e-6

    def test_group_sample_mean(self, unit1):
        G = DiscreteMeasure(unit1, [0.2, 0.7], [0.5, 0.5])
        h = sample_hdp(1.0, G, 1.0, 2, StickBreakingTruncation(20, 1.0), seed=1)
        h = sample_groups(h, KernelModel("laplace", 0.1, 1), 100_000, seed=2)
        for q, y in zip(h.Qs, h.groups):
            se = y[:, 0].std(ddof=1) / math.sqrt(len(y))
            assert abs(y[:, 0].mean() - q.measure.mean()[0]) <= 3 * se

    def test_groups_deterministic(self, unit1):
        h = sample_hdp(1.0, UniformBoxSampler(unit1), 1.0, 2, StickBreakingTruncation(10, 1.0), seed=0)
        k = KernelModel("gaussian", 0.1, 1)
        a, b = sample_groups(h, k, 50, 9), sample_groups(h, k, 50, 9)
        for ya, yb in zip(a.groups, b.groups):
            np.testing.assert_array_equal(ya, yb)


class TestFiniteDirichletProjection:
    def test_single_cell(self, unit1):
        G = DiscreteMeasure(unit1, [0.2, 0.9], [0.4, 0.6])
        np.testing.assert_allclose(finite_dirichlet_projection(G, [([0.0], [1.0])], 2.5), [2.5])

    def test_two_cells(self, unit1):
        G = DiscreteMeasure(unit1, [0.25, 0.75], [0.5, 0.5])
        np.testing.assert_allclose(finite_dirichlet_projection(G, [([0.0], [0.5]), ([0.5], [1.0])], 2.0), [1.0, 1.0])

    def test_gap(self, unit1):
        G = DiscreteMeasure(unit1, [0.25, 0.75], [0.5, 0.5])
        with pytest.raises(PartitionGap):
            finite_dirichlet_projection(G, [([0.0], [0.5])], 1.0)

    def test_cell_marginal_is_beta(self, unit1):
        G = DiscreteMeasure(unit1, [0.1, 0.3, 0.6, 0.9], [0.1, 0.2, 0.3, 0.4])
        alpha = 2.0
        a, b = finite_dirichlet_projection(G, [([0.0], [0.5]), ([0.5], [1.0])], alpha)
        masses, _ = sample_dp_masses(alpha, G.weights, 60, 100_000, stream(12, "ks"))
        q = masses[:, :2].sum(axis=1)
        assert stats.kstest(q, stats.beta(a, b).cdf).statistic < 0.02


class TestDirichletHelpers:
    def test_log_dirichlet_small_parameters(self):
        lq = log_dirichlet([1e-4, 0.9999], 2000, np.random.default_rng(0))
        assert np.all(np.isfinite(lq))
        np.testing.assert_allclose(np.exp(lq).sum(axis=1), 1.0, rtol=1e-12)

    def test_log_density_matches_scipy(self):
        rng = np.random.default_rng(1)
        a = np.array([0.7, 1.3, 2.2])
        q = rng.dirichlet(a, 20)
        np.testing.assert_allclose(dirichlet_log_density(np.log(q), a), [stats.dirichlet(a).logpdf(x) for x in q], rtol=1e-10)
