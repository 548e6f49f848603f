from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_measure
from oracles import brute_force_transport, random_vertex
from hdp_transport.errors import DomainMismatch, InvalidCoupling, InvalidMeasure, InvalidParameter
from hdp_transport.transport import (
    BoundedDomain,
    Coupling,
    DiscreteMeasure,
    cost_matrix,
    coupling_cost,
    measure_from_any,
    solve_transport,
    validate_coupling,
    wasserstein,
    wasserstein_1d_batch,
)


def measures(d: int = 1, max_atoms: int = 4):
    @st.composite
    def build(draw):
        seed = draw(st.integers(0, 2**32 - 1))
        k = draw(st.integers(1, max_atoms))
        return random_measure(np.random.default_rng(seed), k, d)

    return build()


class TestDiscreteMeasure:
    def test_merges_duplicate_atoms(self, unit1):
        G = DiscreteMeasure(unit1, [0.2, 0.2, 0.7], [0.25, 0.25, 0.5])
        assert G.size == 2
        np.testing.assert_allclose(G.weights, [0.5, 0.5])

    def test_drops_negligible_atoms(self, unit1):
        G = DiscreteMeasure(unit1, [0.1, 0.9], [1.0, 1e-17])
        assert G.size == 1

    def test_rejects_bad_input(self, unit1):
        with pytest.raises(InvalidMeasure):
            DiscreteMeasure(unit1, [0.1, 0.9], [0.5, 0.4])
        with pytest.raises(InvalidMeasure):
            DiscreteMeasure(unit1, [1.5], [1.0])
        with pytest.raises(InvalidMeasure):
            DiscreteMeasure(unit1, [0.1, 0.2], [1.2, -0.2])
        with pytest.raises(InvalidParameter):
            BoundedDomain((0.0,), (0.0,))

    def test_immutable(self, unit1):
        G = DiscreteMeasure.dirac(unit1, 0.3)
        with pytest.raises(AttributeError):
            G.weights = np.array([1.0])
        with pytest.raises(ValueError):
            G.weights[0] = 0.5

    def test_json_roundtrip(self, unit2):
        G = random_measure(np.random.default_rng(0), 3, 2)
        again = measure_from_any(json.loads(json.dumps(G.to_json())))
        assert again == G


class TestWasserstein:
    def test_identity_is_diagonal(self, unit1):
        G = DiscreteMeasure(unit1, [0.1, 0.4, 0.8], [0.2, 0.5, 0.3])
        res = wasserstein(G, G, 2)
        assert res.distance == 0.0
        np.testing.assert_allclose(res.coupling.weights, np.diag(G.weights))

    @pytest.mark.parametrize("r", [1.0, 1.5, 2.0, 3.0])
    def test_two_diracs(self, unit1, r):
        res = wasserstein(DiscreteMeasure.dirac(unit1, 0.0), DiscreteMeasure.dirac(unit1, 1.0), r)
        np.testing.assert_allclose(res.distance, 1.0)

    def test_split_to_single_atom(self, unit1):
        G = DiscreteMeasure(unit1, [0.0, 1.0], [0.5, 0.5])
        Gp = DiscreteMeasure(unit1, [0.25], [1.0])
        np.testing.assert_allclose(wasserstein(G, Gp, 1).distance, 0.5)

    def test_domain_mismatch(self, unit1):
        other = BoundedDomain((0.0,), (2.0,))
        with pytest.raises(DomainMismatch):
            wasserstein(DiscreteMeasure.dirac(unit1, 0.5), DiscreteMeasure.dirac(other, 0.5))

    def test_order_below_one(self, unit1):
        G = DiscreteMeasure.dirac(unit1, 0.5)
        with pytest.raises(InvalidParameter):
            wasserstein(G, G, 0.5)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_matches_vertex_oracle(self, d):
        rng = np.random.default_rng(100 + d)
        for _ in range(15):
            G = random_measure(rng, int(rng.integers(1, 6)), d)
            Gp = random_measure(rng, int(rng.integers(1, 6)), d)
            for r in (1.0, 2.0):
                C = cost_matrix(G.locations, Gp.locations, r)
                ref = brute_force_transport(G.weights, Gp.weights, C)
                np.testing.assert_allclose(wasserstein(G, Gp, r).distance ** r, ref, rtol=1e-9, atol=1e-14)

    def test_multidim_solver_on_line_matches_monotone(self):
        # points on the diagonal of the square: the 2-D solver must agree with 1-D transport
        rng = np.random.default_rng(5)
        G1, Gp1 = random_measure(rng, 5), random_measure(rng, 4)
        sq = BoundedDomain.unit(2)
        G2 = DiscreteMeasure(sq, np.repeat(G1.locations, 2, axis=1), G1.weights)
        Gp2 = DiscreteMeasure(sq, np.repeat(Gp1.locations, 2, axis=1), Gp1.weights)
        np.testing.assert_allclose(wasserstein(G2, Gp2, 1).distance, np.sqrt(2) * wasserstein(G1, Gp1, 1).distance, rtol=1e-10)

    def test_solver_cost_equals_plan_cost(self):
        rng = np.random.default_rng(9)
        a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(7))
        C = rng.random((6, 7))
        plan, cost = solve_transport(a, b, C)
        np.testing.assert_allclose(cost, np.sum(plan * C), rtol=1e-12)
        np.testing.assert_allclose(plan.sum(1), a, atol=1e-12)
        np.testing.assert_allclose(plan.sum(0), b, atol=1e-12)

    def test_batch_1d_matches_scalar(self):
        rng = np.random.default_rng(3)
        x, y = rng.random((20, 4)), rng.random((20, 3))
        a, b = rng.dirichlet(np.ones(4), 20), rng.dirichlet(np.ones(3), 20)
        dom = BoundedDomain.unit(1)
        for r in (1.0, 2.0):
            ref = [wasserstein(DiscreteMeasure(dom, x[i], a[i]), DiscreteMeasure(dom, y[i], b[i]), r).distance for i in range(20)]
            np.testing.assert_allclose(wasserstein_1d_batch(x, a, y, b, r), ref, rtol=1e-10, atol=1e-14)

    @given(measures(), measures())
    def test_symmetric_and_nonnegative(self, G, Gp):
        d1, d2 = wasserstein(G, Gp, 1).distance, wasserstein(Gp, G, 1).distance
        assert d1 >= 0
        np.testing.assert_allclose(d1, d2, rtol=1e-10, atol=1e-14)

    @given(measures(2), measures(2), measures(2))
    def test_triangle_inequality(self, A, B, C):
        for r in (1.0, 2.0):
            ab, bc, ac = (wasserstein(x, y, r).distance for x, y in ((A, B), (B, C), (A, C)))
            assert ac <= ab + bc + 1e-10

    @given(measures(2), measures(2))
    def test_monotone_in_order(self, G, Gp):
        ws = [wasserstein(G, Gp, r).distance for r in (1.0, 1.5, 2.0, 3.0)]
        assert all(b >= a - 1e-10 for a, b in zip(ws, ws[1:]))

    @given(measures(2), measures(2))
    def test_power_bounded_by_diameter(self, G, Gp):
        diam = G.domain.diameter
        w1 = wasserstein(G, Gp, 1).distance
        w2 = wasserstein(G, Gp, 2).distance
        assert w2**2 <= diam * w1 + 1e-10

    @given(measures(3, 5), measures(3, 5))
    def test_coupling_is_feasible_and_attains_distance(self, G, Gp):
        res = wasserstein(G, Gp, 2)
        rep = validate_coupling(res.coupling)
        assert rep.ok and rep.row_violation <= 1e-10 and rep.col_violation <= 1e-10
        np.testing.assert_allclose(coupling_cost(res.coupling, 2), res.distance, rtol=1e-9, atol=1e-12)

    def test_result_json(self, unit1):
        G = DiscreteMeasure(unit1, [0.0, 1.0], [0.5, 0.5])
        obj = json.loads(json.dumps(wasserstein(G, G).to_json()))
        assert obj["distance"] == 0.0 and obj["order"] == 1.0


class TestCouplingCost:
    def test_diagonal(self, unit1):
        G = DiscreteMeasure(unit1, [0.1, 0.6], [0.3, 0.7])
        assert coupling_cost(Coupling(G, G, np.diag(G.weights)), 1) == 0.0

    def test_product_of_diracs(self, unit2):
        A = DiscreteMeasure.dirac(unit2, [0.0, 0.0])
        B = DiscreteMeasure.dirac(unit2, [0.3, 0.4])
        np.testing.assert_allclose(coupling_cost(Coupling(A, B, [[1.0]]), 1), 0.5)

    def test_product_of_uniform_pairs(self, unit1):
        G = DiscreteMeasure(unit1, [0.0, 1.0], [0.5, 0.5])
        np.testing.assert_allclose(coupling_cost(Coupling(G, G, np.outer(G.weights, G.weights)), 1), 0.5)

    def test_rejects_infeasible(self, unit1):
        G = DiscreteMeasure(unit1, [0.0, 1.0], [0.5, 0.5])
        with pytest.raises(InvalidCoupling):
            coupling_cost(Coupling(G, G, np.zeros((2, 2))), 1)
        with pytest.raises(InvalidCoupling):
            coupling_cost(Coupling(G, G, [[0.6, -0.1], [-0.1, 0.6]]), 1)


class TestValidateCoupling:
    def test_optimal_coupling(self):
        rng = np.random.default_rng(1)
        res = wasserstein(random_measure(rng, 4, 2), random_measure(rng, 5, 2), 1)
        rep = validate_coupling(res.coupling)
        assert max(rep.row_violation, rep.col_violation) <= 1e-10

    def test_zero_matrix(self, unit1):
        G = DiscreteMeasure(unit1, [0.0, 0.5, 1.0], [0.2, 0.5, 0.3])
        rep = validate_coupling(Coupling(G, G, np.zeros((3, 3))))
        np.testing.assert_allclose(rep.row_violation, 0.5)
        np.testing.assert_allclose(rep.col_violation, 0.5)
        assert not rep.ok

    def test_wrong_shape(self, unit1):
        G = DiscreteMeasure(unit1, [0.0, 1.0], [0.5, 0.5])
        assert not validate_coupling(Coupling(G, G, np.zeros((3, 2)))).ok

    def test_random_vertices(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            G, Gp = random_measure(rng, int(rng.integers(1, 5))), random_measure(rng, int(rng.integers(1, 5)))
            plan = random_vertex(G.weights, Gp.weights, rng)
            rep = validate_coupling(Coupling(G, Gp, plan))
            assert rep.ok and max(rep.row_violation, rep.col_violation) <= 1e-10
            # a vertex has a forest support: at most m + n - 1 nonzero cells
            assert np.count_nonzero(plan > 0) <= G.size + Gp.size - 1


class TestPackageOracle:
    def test_agrees_with_test_oracle(self):
        from hdp_transport.oracles import brute_force_transport as pkg_oracle

        rng = np.random.default_rng(21)
        for _ in range(10):
            a, b = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            C = rng.random((4, 4))
            np.testing.assert_allclose(pkg_oracle(a, b, C), brute_force_transport(a, b, C), rtol=1e-9)
