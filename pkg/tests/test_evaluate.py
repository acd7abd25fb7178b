import itertools

import numpy as np
import pytest

from hiercdm.core import Hierarchy, LcmParams, hierarchy_template
from hiercdm.evaluate import (
    Metrics,
    aggregate,
    hamming_costs,
    hierarchy_isomorphisms,
    is_isomorphic,
    match_columns,
    score,
)
from hiercdm.recovery import recover
from hiercdm.simulate import SimSpec, simulate


def brute_force_cost(cost):
    m = cost.shape[0]
    return min(sum(cost[a, p[a]] for a in range(m)) for p in itertools.permutations(range(m)))


class TestMatchColumns:
    def test_swapped_columns(self):
        g = np.array([[1, 0, 1], [0, 1, 1], [0, 0, 1]])
        perm = match_columns(g[:, [1, 0, 2]], g)
        assert perm.tolist() == [1, 0, 2]
        assert hamming_costs(g[:, [1, 0, 2]], g)[np.arange(3), perm].sum() == 0

    def test_single_column(self):
        assert match_columns(np.array([[1], [0]]), np.array([[0], [0]])).tolist() == [0]

    def test_three_column_oracle(self, rng):
        gt = rng.integers(0, 2, size=(8, 3))
        gh = rng.integers(0, 2, size=(8, 3))
        cost = hamming_costs(gh, gt)
        perm = match_columns(gh, gt)
        assert cost[np.arange(3), perm].sum() == brute_force_cost(cost)

    def test_padding_when_estimate_smaller(self):
        gt = np.array([[1, 0, 1], [0, 1, 1]])
        perm = match_columns(gt[:, :2], gt)
        assert perm.tolist()[:2] == [0, 1] and perm[2] == -1

    def test_theta_breaks_ties(self):
        g = np.ones((2, 2), dtype=int)
        theta_true = np.array([[0.2, 0.8], [0.2, 0.8]])
        theta_hat = theta_true[:, ::-1]
        assert match_columns(g, g, theta_hat, theta_true).tolist() == [1, 0]

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            hamming_costs(np.ones((2, 2)), np.ones((3, 2)))


class TestIsomorphism:
    def test_relabelled_chain(self):
        a = Hierarchy(3, frozenset({(0, 1), (1, 2)}))
        b = Hierarchy(3, frozenset({(2, 0), (0, 1)}))
        maps = list(hierarchy_isomorphisms(a, b))
        assert len(maps) == 1 and maps[0].tolist() == [2, 0, 1]

    def test_different_shapes(self):
        assert not is_isomorphic(hierarchy_template("linear"), hierarchy_template("divergent"))
        assert not is_isomorphic(Hierarchy(2, frozenset()), Hierarchy(3, frozenset()))

    def test_automorphisms_of_diamond(self):
        maps = list(hierarchy_isomorphisms(hierarchy_template("convergent"),
                                           hierarchy_template("convergent")))
        assert len(maps) == 2

    def test_shortcut_edges_ignored(self):
        a = Hierarchy(3, frozenset({(0, 1), (1, 2), (0, 2)}))
        assert is_isomorphic(a, Hierarchy(3, frozenset({(0, 1), (1, 2)})))


def truth_and_params(model="dina", name="linear", seed=0):
    truth, _ = simulate(SimSpec(model, hierarchy_template(name), n_subjects=5, seed=seed))
    return truth, LcmParams(truth.proportions, truth.theta)


class TestScore:
    @pytest.mark.parametrize("name", ["linear", "convergent", "divergent", "unstructured"])
    def test_self_match_is_perfect(self, name):
        truth, params = truth_and_params("dina", name)
        m = score(recover(params), params, truth)
        assert m == Metrics(1, 1, 1, 0.0, 1.0)

    def test_invariant_to_relabelling(self, rng):
        truth, params = truth_and_params("gdina", "divergent", seed=3)
        perm = rng.permutation(params.n_classes)
        shuffled = LcmParams(params.proportions[perm], params.item_params[:, perm])
        assert score(recover(params), params, truth) == score(recover(shuffled), shuffled, truth)

    def test_wrong_class_count_has_no_mse(self):
        truth, params = truth_and_params()
        merged = params.item_params.copy()
        merged[:, 1] = merged[:, 0]
        pi = params.proportions.copy()
        pi[0] += pi[1] - 1e-6
        pi[1] = 1e-6
        est = LcmParams(pi, merged)
        m = score(recover(est), est, truth)
        assert m.acc_m == 0 and m.mse_theta is None

    def test_mse_of_perturbed_estimate(self):
        truth, params = truth_and_params()
        est = LcmParams(params.proportions, params.item_params + np.where(params.item_params > 0.5, -0.01, 0.01))
        m = score(recover(est), est, truth)
        assert m.mse_theta == pytest.approx(1e-4)


class TestMetrics:
    def test_presence_rules(self):
        with pytest.raises(ValueError):
            Metrics(1, 1, 0, None, None)
        with pytest.raises(ValueError):
            Metrics(0, 0, 1, None, None)
        Metrics(0, 0, 1, None, 0.9)

    def test_aggregate_skips_missing(self):
        rows = [Metrics(1, 1, 1, 0.002, 1.0), Metrics(0, 0, 0)]
        agg = aggregate(rows)
        assert agg["acc_m"] == 0.5
        assert agg["mse_theta"] == pytest.approx(0.002)

    def test_aggregate_all_missing(self):
        assert aggregate([Metrics(0, 0, 0)])["acc_q"] is None
