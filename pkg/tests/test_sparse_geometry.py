from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdp_transport.errors import EmptySupport, InvalidParameter
from hdp_transport.sparse_geometry import (
    SupportSpec,
    box_covering_number,
    box_packing_number,
    center_covering,
    classify_sparsity,
    covering,
    covering_count,
    gauge_estimate,
    separation_check,
    sparsity_profile,
    valid_separation_scale,
)
from hdp_transport.transport import BoundedDomain


def brute_cover_1d(x: np.ndarray, eps: float) -> int:
    """Smallest number of closed intervals of length 2 eps covering ``x`` by exhaustive search."""
    x = np.sort(x)
    # an optimal covering can use intervals whose left end is a data point
    starts = list(x)
    for k in range(1, len(x) + 1):
        for combo in itertools.combinations(starts, k):
            c = np.array(combo)
            if np.all(np.any((x[:, None] >= c[None, :] - 1e-12) & (x[:, None] <= c[None, :] + 2 * eps + 1e-12), axis=1)):
                return k
    return len(x)


class TestCovering:
    @pytest.mark.parametrize("eps", [1e-6, 0.1, 10.0])
    def test_single_point(self, eps):
        assert covering_count(SupportSpec.explicit([0.3]), eps) == 1

    def test_dyadic_eighth(self):
        K = covering_count(SupportSpec.dyadic(), 1 / 8)
        assert K <= math.ceil(math.log(1 / (2 / 8)) / math.log(2)) + 1
        assert K == 2

    def test_cantor_level_eight(self):
        S = SupportSpec.cantor(8)
        eps = 3.0**-4 / 2
        assert covering_count(S, eps) == 16
        # left endpoints of the 16 level-4 intervals are pairwise farther than 2 eps
        reps = SupportSpec.cantor(4).points[:, 0]
        gaps = np.diff(np.sort(reps))
        assert len(reps) == 16 and gaps.min() > 2 * eps

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=7), st.floats(0.01, 0.3))
    def test_sweep_is_optimal(self, pts, eps):
        x = np.array(pts)
        assert covering_count(SupportSpec.explicit(x), eps) == brute_cover_1d(x, eps)

    @given(st.integers(0, 10_000), st.floats(0.05, 0.5))
    def test_every_point_covered(self, seed, eps):
        P = np.random.default_rng(seed).random((40, 2))
        cov = covering(SupportSpec.explicit(P), eps)
        d = np.linalg.norm(P - cov.centers[cov.assignment], axis=1)
        assert d.max() <= eps * (1 + 1e-9)

    def test_invalid(self):
        with pytest.raises(InvalidParameter):
            covering_count(SupportSpec.explicit([0.0]), 0.0)
        with pytest.raises(EmptySupport):
            SupportSpec.explicit([])


class TestSeparation:
    def test_far_points(self):
        assert separation_check(SupportSpec.explicit([0.0, 1.0]), 0.1, 2)

    def test_near_points(self):
        assert not separation_check(SupportSpec.explicit([0.0, 0.15]), 0.1, 2)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 0.3))
    def test_center_covering_uses_data_points(self, pts, eps):
        x = np.array(pts)
        cov = center_covering(SupportSpec.explicit(x), eps)
        assert np.all(np.isin(cov.centers[:, 0], x))
        assert np.abs(x - cov.centers[cov.assignment, 0]).max() <= eps * (1 + 1e-9)
        assert cov.count >= covering_count(SupportSpec.explicit(x), eps)

    def test_dyadic_scales_exist(self):
        S = SupportSpec.dyadic()
        for delta in np.geomspace(1e-3, 1e-1, 7):
            eps = valid_separation_scale(S, float(delta), 0.5, 2.0)
            assert eps is not None and 0.5 * delta < eps < delta


class TestGauge:
    def test_two_atoms(self):
        S = SupportSpec.explicit([0.0, 1.0], [0.5, 0.5])
        assert gauge_estimate(S, 0.1) == 0.5

    def test_unweighted_rejected(self):
        with pytest.raises(InvalidParameter):
            gauge_estimate(SupportSpec.explicit([0.0, 1.0]), 0.1)

    def test_dyadic_log_decay(self):
        S = SupportSpec.dyadic(gamma1=2.0)
        eps = np.geomspace(1e-12, 1e-2, 15)
        g = np.array([gauge_estimate(S, float(e)) for e in eps])
        x, y = np.log(np.log(1 / eps)), np.log(g)
        A = np.vstack([x, np.ones_like(x)]).T
        coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
        r2 = 1 - res[0] / np.sum((y - y.mean()) ** 2)
        assert r2 >= 0.95
        # g(eps) >= c log(1/eps)^-2 with the constant read off the largest scale
        c = g[-1] * np.log(1 / eps[-1]) ** 2
        assert np.all(g >= 0.5 * c * np.log(1 / eps) ** -2)

    @pytest.mark.parametrize("j", range(0, 11))
    def test_cantor_self_similar(self, j):
        S = SupportSpec.cantor(10)
        np.testing.assert_allclose(gauge_estimate(S, 3.0**-j / 2), 2.0**-j, rtol=1e-12)


class TestClassification:
    def test_dyadic_supersparse(self):
        S = SupportSpec.dyadic(gamma1=2.0)
        c = classify_sparsity(sparsity_profile(S, np.geomspace(1e-12, 1e-2, 21)))
        assert c.kind == "supersparse"
        assert abs(c.gamma0 - 1) <= 0.2 and abs(c.gamma1 - 2) <= 0.4

    def test_cantor_ordinary(self):
        S = SupportSpec.cantor(10)
        c = classify_sparsity(sparsity_profile(S, 3.0 ** -np.arange(1, 10) / 2))
        dim = math.log(2) / math.log(3)
        assert c.kind == "ordinary"
        assert abs(c.gamma0 - dim) <= 0.15 * dim and abs(c.gamma1 - dim) <= 0.15 * dim

    def test_isolated_atoms(self):
        S = SupportSpec.explicit([0.1, 0.5, 0.9], [0.2, 0.3, 0.5])
        c = classify_sparsity(sparsity_profile(S, np.geomspace(1e-6, 1e-2, 8)))
        assert c.kind == "ordinary" and c.gamma0 == 0.0

    def test_profile_envelope_monotone(self):
        prof = sparsity_profile(SupportSpec.cantor(8), np.geomspace(1e-4, 0.3, 12))
        assert np.all(np.diff(prof.K_envelope) >= 0)
        assert np.all(np.diff(prof.g_vals) <= 0)

    def test_short_grid_rejected(self):
        with pytest.raises(InvalidParameter):
            classify_sparsity(sparsity_profile(SupportSpec.cantor(6), [0.1, 0.05]))


class TestBoxes:
    def test_unit_interval(self):
        assert box_covering_number(BoundedDomain.unit(1), 0.25) == 2

    def test_half_diameter(self):
        dom = BoundedDomain.unit(2)
        assert box_covering_number(dom, dom.diameter / 2) == 1

    def test_unit_square(self):
        assert box_covering_number(BoundedDomain.unit(2), 0.25) == 9

    @given(st.floats(0.02, 0.6))
    def test_grid_covers_square(self, eps):
        dom = BoundedDomain.unit(2)
        n = box_covering_number(dom, eps)
        side = 2 * eps / math.sqrt(2)
        per = math.ceil(1 / side - 1e-12)
        assert n == 1 or n == per * per

    @given(st.floats(0.05, 1.0))
    def test_packing_separated(self, eps):
        dom = BoundedDomain.unit(1)
        D = box_packing_number(dom, eps)
        pts = np.linspace(0, 1, D)
        assert D == 1 or np.diff(pts).min() > eps * (1 - 1e-9)
