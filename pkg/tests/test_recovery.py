import itertools

import numpy as np
import pytest

from hiercdm.core import AttributeProfileSet, Hierarchy, IndicatorMatrix, LcmParams, hierarchy_template
from hiercdm.evaluate import is_isomorphic, reference_q
from hiercdm.recovery import (
    PartialOrderDag,
    RecoveryFailedError,
    binary_representations,
    extract_hierarchy,
    gdina_distinguishes,
    indicator_matrix,
    partial_orders,
    reconstruct_q,
    recover,
)
from hiercdm.simulate import SimSpec, simulate

FIG4_THETA = [[0.2, 0.8, 0.8], [0.2, 0.2, 0.8], [0.2, 0.2, 0.8]]


def dag(n, edges):
    a = np.zeros((n, n), dtype=np.int8)
    for u, v in edges:
        a[u, v] = 1
    return PartialOrderDag(a)


def lcm(theta):
    theta = np.asarray(theta, float)
    m = theta.shape[1]
    return LcmParams(np.full(m, 1 / m), theta)


class TestIndicator:
    def test_three_class_example(self):
        g = indicator_matrix(lcm(FIG4_THETA))
        np.testing.assert_array_equal(g.entries, [[0, 1, 1], [0, 0, 1], [0, 0, 1]])

    def test_constant_row(self):
        g = indicator_matrix(lcm([[0.4, 0.4, 0.4]]))
        np.testing.assert_array_equal(g.entries, [[1, 1, 1]])

    def test_exact_argmax(self, rng):
        theta = rng.uniform(size=(10, 5))
        g = indicator_matrix(lcm(theta), eps_gamma=0.0)
        np.testing.assert_array_equal(g.entries.sum(axis=1), 1)

    def test_inactive_excluded(self):
        p = LcmParams([0.5, 0.5 - 1e-6, 1e-6], [[0.2, 0.5, 0.9]])
        assert indicator_matrix(p, rho=1e-4).shape == (1, 2)


class TestPartialOrders:
    def test_chain_from_example(self):
        g = IndicatorMatrix([[0, 1, 1], [0, 0, 1], [0, 0, 1]])
        np.testing.assert_array_equal(partial_orders(g).adjacency, [[0, 1, 0], [0, 0, 1], [0, 0, 0]])

    def test_identical_columns_cycle(self):
        g = IndicatorMatrix([[1, 1, 0], [0, 0, 1]])
        with pytest.raises(RecoveryFailedError) as exc:
            partial_orders(g, 0.0)
        assert exc.value.cycle is not None

    def test_shortcut_removed(self):
        # 0 <= 1 <= 2 and 0 <= 2 directly; reduction keeps only the chain
        g = IndicatorMatrix([[0, 1, 1], [0, 0, 1], [1, 1, 1]])
        assert partial_orders(g).edges() == [(0, 1), (1, 2)]

    def test_tolerance_absorbs_one_error(self):
        g = np.array([[0, 1]] * 20 + [[1, 0]])
        with pytest.raises(RecoveryFailedError):
            # incomparable without tolerance leaves two sources; not an error,
            # but identical columns would be; check the tolerant direction instead
            partial_orders(IndicatorMatrix(np.array([[1, 1]] * 5)), 0.0)
        assert partial_orders(IndicatorMatrix(g), 0.0).edges() == []
        assert partial_orders(IndicatorMatrix(g), 0.1).edges() == [(0, 1)]

    def test_tolerance_is_strict(self):
        # three violations out of 30 items is not below 10%
        g = np.array([[0, 1]] * 27 + [[1, 0]] * 3)
        assert partial_orders(IndicatorMatrix(g), 0.1).edges() == []
        assert partial_orders(IndicatorMatrix(g), 0.11).edges() == [(0, 1)]

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            partial_orders(IndicatorMatrix([[0, 1]]), 1.0)


class TestBinaryRepresentations:
    def test_six_node_example(self):
        d = dag(6, [(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5)])
        prof = binary_representations(d)
        assert prof.n_attributes == 4
        assert set(prof.bitstrings()) == {"0000", "1000", "1100", "1010", "1110", "1111"}

    def test_four_chain(self):
        prof = binary_representations(dag(4, [(0, 1), (1, 2), (2, 3)]))
        assert prof.bitstrings() == ["000", "100", "110", "111"]

    def test_single_node(self):
        prof = binary_representations(dag(1, []))
        assert prof.n_attributes == 0 and len(prof) == 1

    def test_multiple_sources_get_virtual_root(self):
        prof = binary_representations(dag(2, []))
        assert sorted(prof.bitstrings()) == ["01", "10"]

    def test_nested_union_gets_fresh_dimension(self):
        # node 3 has parents 1 and 2 where 2 already lies above 1
        prof = binary_representations(dag(4, [(0, 1), (1, 2), (1, 3), (2, 3)]))
        assert len(set(prof.bitstrings())) == 4

    def test_respects_edges(self):
        d = dag(6, [(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5)])
        a = binary_representations(d).profiles
        for u, v in d.edges():
            assert np.all(a[u] <= a[v]) and not np.array_equal(a[u], a[v])


class TestExtractHierarchy:
    def test_diamond(self):
        prof = AttributeProfileSet(4, [[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 0],
                                       [1, 0, 1, 0], [1, 1, 1, 0], [1, 1, 1, 1]])
        assert extract_hierarchy(prof).sorted_edges() == [(0, 1), (0, 2), (1, 3), (2, 3)]

    def test_single_attribute(self):
        assert extract_hierarchy(AttributeProfileSet(1, [[0], [1]])).edges == frozenset()

    def test_full_profile_set(self):
        prof = AttributeProfileSet(3, list(itertools.product((0, 1), repeat=3)))
        assert extract_hierarchy(prof).edges == frozenset()

    def test_identical_columns_fail(self):
        with pytest.raises(RecoveryFailedError):
            extract_hierarchy(AttributeProfileSet(2, [[0, 0], [1, 1]]))


class TestReconstructQ:
    CHAIN = AttributeProfileSet(2, [[0, 0], [1, 0], [1, 1]])

    def test_minimum_indicated(self):
        q = reconstruct_q(IndicatorMatrix([[0, 1, 1]]), self.CHAIN)
        np.testing.assert_array_equal(q.entries, [[1, 0]])

    def test_all_ones_row_is_empty(self):
        q, empty, _ = reconstruct_q(IndicatorMatrix([[1, 1, 1]]), self.CHAIN, return_flags=True)
        np.testing.assert_array_equal(q.entries, [[0, 0]])
        assert empty == [0]

    def test_top_only(self):
        q = reconstruct_q(IndicatorMatrix([[0, 0, 1]]), self.CHAIN)
        np.testing.assert_array_equal(q.entries, [[1, 1]])

    def test_antichain_falls_back_to_and(self):
        prof = AttributeProfileSet(2, [[1, 0], [0, 1]])
        q, _, anti = reconstruct_q(IndicatorMatrix([[1, 1]]), prof, return_flags=True)
        np.testing.assert_array_equal(q.entries, [[0, 0]])
        assert anti == [0]

    def test_shape_check(self):
        with pytest.raises(ValueError):
            reconstruct_q(IndicatorMatrix([[1, 1]]), self.CHAIN)


class TestRecover:
    @pytest.mark.parametrize("name", ["linear", "convergent", "divergent", "unstructured"])
    @pytest.mark.parametrize("model", ["dina", "dina_dino_mix", "gdina"])
    def test_noiseless_round_trip(self, name, model):
        truth, _ = simulate(SimSpec(model, hierarchy_template(name), n_subjects=5, seed=4))
        rec = recover(LcmParams(truth.proportions, truth.theta), rho=0.0, eps_gamma=1e-9)
        assert len(rec.profiles) == truth.n_classes
        assert is_isomorphic(rec.hierarchy, truth.hierarchy)

    def test_linear_dina_chain(self):
        truth, _ = simulate(SimSpec("dina", hierarchy_template("linear"), n_subjects=5))
        rec = recover(LcmParams(truth.proportions, truth.theta))
        assert rec.k_hat == 4
        assert rec.hierarchy.sorted_edges() == [(0, 1), (1, 2), (2, 3)]

    def test_gdina_divergent_profile_count(self):
        truth, _ = simulate(SimSpec("gdina", hierarchy_template("divergent"), n_subjects=5))
        assert len(recover(LcmParams(truth.proportions, truth.theta)).profiles) == 7

    def test_single_class_degenerate(self):
        rec = recover(LcmParams([1 - 2e-5, 1e-5, 1e-5], [[0.3, 0.5, 0.6]] * 3))
        assert rec.degenerate and rec.k_hat == 0

    def test_override(self):
        truth, _ = simulate(SimSpec("dina", hierarchy_template("linear"), n_subjects=5))
        override = AttributeProfileSet(4, truth.profiles.profiles)
        rec = recover(LcmParams(truth.proportions, truth.theta), profiles_override=override)
        assert rec.profiles is override
        with pytest.raises(ValueError):
            recover(LcmParams(truth.proportions, truth.theta),
                    profiles_override=AttributeProfileSet(1, [[0], [1]]))

    def test_q_regenerates_gamma_on_dina(self):
        truth, _ = simulate(SimSpec("dina", hierarchy_template("convergent"), n_subjects=5, seed=2))
        rec = recover(LcmParams(truth.proportions, truth.theta))
        a = rec.profiles.profiles
        q = rec.q.entries
        regenerated = (q @ a.T == q.sum(axis=1, keepdims=True)).astype(np.int8)
        np.testing.assert_array_equal(regenerated, rec.gamma.entries)

    def test_reference_q_matches_dina_generator(self):
        truth, _ = simulate(SimSpec("dina", hierarchy_template("linear"), n_subjects=5, seed=9))
        ref = reference_q(truth)
        q = truth.q.entries
        # closing each row under prerequisites of the linear chain
        closed = q.copy()
        for k in (3, 2, 1):
            closed[:, k - 1] |= closed[:, k]
        np.testing.assert_array_equal(ref, closed)


@pytest.mark.parametrize("q,a,b,expected", [
    ((0, 1, 0), (1, 0, 0), (1, 1, 0), True),
    ((1, 0, 0), (1, 1, 0), (1, 1, 1), False),
    ((0, 0, 0), (0, 0, 0), (1, 1, 1), False),
])
def test_gdina_distinguishes(q, a, b, expected):
    assert gdina_distinguishes(q, a, b) is expected


def test_hierarchy_from_recovery_is_reduced():
    h = extract_hierarchy(AttributeProfileSet(3, [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]]))
    assert h == Hierarchy(3, frozenset({(0, 1), (1, 2)}))
