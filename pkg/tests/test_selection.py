import math

import numpy as np
import pytest

from hiercdm.core import LcmParams
from hiercdm.estimator import EmConfig, FitResult, PosteriorMatrix, random_init
from hiercdm.selection import TuningGrid, bic, n_distinct_levels, two_stage_search
from hiercdm.simulate import SimSpec, make_rng, simulate
from hiercdm.core import hierarchy_template


def fake_fit(pi, theta, loglik=-100.0, rho=1e-4):
    p = LcmParams(np.asarray(pi, float), np.asarray(theta, float))
    cfg = EmConfig(m_upper=len(pi), rho=rho)
    return FitResult(p, PosteriorMatrix(np.ones((1, len(pi))) / len(pi)), [], [], loglik,
                     int((p.proportions > rho).sum()), True, 1, cfg)


class _Data:
    def __init__(self, n):
        self.n_subjects = n


def test_single_class_penalty():
    f = fake_fit([1.0], np.full((7, 1), 0.4))
    assert bic(f, _Data(100)) == pytest.approx(200.0 + math.log(100) * 7)


def test_true_dina_dimension_count():
    truth, _ = simulate(SimSpec("dina", hierarchy_template("linear"), n_subjects=10))
    f = fake_fit(truth.proportions, truth.theta, loglik=0.0)
    assert sum(n_distinct_levels(f.params, 1e-4)) == 60
    assert bic(f, _Data(math.e)) == pytest.approx(64.0)


def test_extra_level_costs_log_n():
    theta = np.array([[0.2, 0.2, 0.8], [0.3, 0.7, 0.7]])
    a = fake_fit([0.3, 0.3, 0.4], theta)
    theta2 = theta.copy()
    theta2[0, 1] = 0.5
    b = fake_fit([0.3, 0.3, 0.4], theta2)
    assert bic(b, _Data(500)) - bic(a, _Data(500)) == pytest.approx(math.log(500))


def test_inactive_classes_ignored():
    a = fake_fit([0.5, 0.5 - 1e-6, 1e-6], [[0.2, 0.8, 0.5]])
    b = fake_fit([0.5, 0.5], [[0.2, 0.8]])
    assert bic(a, _Data(50)) == pytest.approx(bic(b, _Data(50)))


def test_permutation_invariance(rng):
    theta = rng.uniform(0.1, 0.9, size=(6, 4))
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    perm = rng.permutation(4)
    assert bic(fake_fit(pi, theta), _Data(80)) == pytest.approx(bic(fake_fit(pi[perm], theta[:, perm]), _Data(80)))


def test_ebic_adds_combinatorial_term():
    f = fake_fit([0.5, 0.5 - 1e-6, 1e-6], [[0.2, 0.8, 0.5]])
    assert bic(f, _Data(50), ebic_gamma=1.0) - bic(f, _Data(50)) == pytest.approx(2 * math.log(3))


def test_default_grid_sizes():
    g = TuningGrid()
    assert len(g.stage1_points()) == 36
    assert len(g.stage2_points()) == 15
    np.testing.assert_allclose(g.stage1_lambda1, np.arange(0.01, 0.0501, 0.005))
    np.testing.assert_allclose(g.stage2_lambda2, np.exp([-1, 0, 1, 2, 3]))


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        TuningGrid(stage2_tau=[])


@pytest.fixture(scope="module")
def data():
    return simulate(SimSpec.from_noise("dina", hierarchy_template("linear"), 0.1,
                                       n_subjects=300, seed=1))[1]


def test_ties_prefer_fewer_classes(data):
    log_n = math.log(data.n_subjects)
    big = ([0.25] * 4, np.tile([0.2, 0.4, 0.6, 0.8], (30, 1)))
    small = ([0.5, 0.5], np.tile([0.2, 0.8], (30, 1)))
    # equalize BIC: 4 classes pay (3 + 120) log N, 2 classes (1 + 60) log N
    ll_big = -1000.0
    ll_small = ll_big - (123 - 61) * log_n / 2

    def fitter(d, cfg, init):
        if cfg.lambda1 == 0.02:
            return fake_fit(*small, loglik=ll_small)
        return fake_fit(*big, loglik=ll_big)

    grid = TuningGrid([0.01, 0.02], [0.005], 0.3, [0.0], [0.05])
    out = two_stage_search(data, grid, EmConfig(m_upper=4), random_init(data, 4, make_rng(0)),
                           warmup_iters=0, fitter=fitter)
    assert out.table[0]["bic"] == pytest.approx(out.table[1]["bic"])
    assert out.fit.n_selected == 2


class TestSearch:
    def test_single_point_grid_warm_starts(self, data):
        calls = []

        def recorder(d, cfg, init):
            from hiercdm.estimator import fit
            res = fit(d, cfg, init)
            calls.append((cfg, init, res))
            return res

        grid = TuningGrid([0.02], [0.005], 0.3, [0.0], [0.05])
        cfg = EmConfig(m_upper=6, max_outer_iters=40)
        out = two_stage_search(data, grid, cfg, random_init(data, 6, make_rng(0)),
                               warmup_iters=10, fitter=recorder)
        assert len(out.table) == 2 and len(calls) == 2
        assert calls[1][0].lambda1 == 0.0
        # stage 2 starts from the stage-1 estimate
        assert calls[1][1] is calls[0][2].params
        assert [r["stage"] for r in out.table] == [1, 2]

    def test_stage2_rows_have_zero_lambda1(self, data):
        grid = TuningGrid([0.02, 0.04], [0.005], 0.3, [0.0, 1.0], [0.05])
        out = two_stage_search(data, grid, EmConfig(m_upper=6, max_outer_iters=30),
                               random_init(data, 6, make_rng(1)), warmup_iters=10)
        assert len(out.table) == 4
        assert all(r["lambda1"] == 0.0 for r in out.table if r["stage"] == 2)
        best = min(r["bic"] for r in out.table)
        assert out.table[[r["bic"] for r in out.table].index(best)]["bic"] == pytest.approx(
            bic(out.fit, data))
