from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcprune.baselines import (
    calibration_trace,
    collinear_representatives,
    default_alpha,
    equal_frequency_bins,
    lasso_cd,
    lasso_importance,
    mi_importance,
    mutual_information,
    pca_importance,
    pruner_report,
    random_scores,
    spearman,
    spearman_importance,
)
from rcprune.data import gen_synthetic_classification, input_range
from rcprune.errors import ConvergenceError
from rcprune.quant import calibration_slice, quantize_model
from rcprune.reservoir import Hyperparams, fit, init_reservoir
from rcprune.sensitivity import PRUNER_KINDS, prune


@pytest.fixture(scope="module")
def q6(henon_model, henon):
    qm = quantize_model(henon_model, 6, input_range(henon))
    return qm, calibration_slice(qm, henon)


def test_random_fixed_seed():
    from oracles import toy_models

    qm, _ = toy_models(1, seed0=5)[0]
    assert np.array_equal(random_scores(qm, 1).ranking, random_scores(qm, 1).ranking)


def test_random_seeds_differ(q6):
    qm, _ = q6
    assert not np.array_equal(random_scores(qm, 0).ranking, random_scores(qm, 1).ranking)


def test_spearman_identity():
    x = np.random.default_rng(0).normal(size=200)
    assert spearman(x, x) == pytest.approx(1.0)
    assert spearman_importance(x[:, None], x)[0] == pytest.approx(1.0)


def test_spearman_null():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=2000), rng.normal(size=2000)
    assert abs(spearman(x, y)) < 0.1


def test_spearman_constant_is_zero():
    assert spearman(np.ones(10), np.arange(10.0)) == 0.0


def test_spearman_rank_invariant():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=300), rng.normal(size=300)
    y = x + 0.5 * y
    assert spearman(np.exp(x), y) == pytest.approx(spearman(x, y), abs=1e-12)


def test_spearman_matches_scipy():
    from scipy.stats import spearmanr

    rng = np.random.default_rng(2)
    x = np.round(rng.normal(size=100), 1)
    y = x + rng.normal(size=100)
    assert spearman(x, y) == pytest.approx(spearmanr(x, y)[0], abs=1e-12)


def test_equal_frequency_bins_balanced():
    b = equal_frequency_bins(np.arange(800.0), 8)
    assert np.bincount(b).tolist() == [100] * 8


def test_equal_frequency_ties_share_bin():
    x = np.array([0.0] * 5 + [1.0] * 5)
    b = equal_frequency_bins(x, 4)
    assert len(set(b[:5])) == 1 and len(set(b[5:])) == 1


def test_mi_null():
    rng = np.random.default_rng(0)
    mi, _ = mutual_information(rng.normal(size=5000), rng.normal(size=5000), 8)
    assert mi < 0.05


def test_mi_identity_is_log_bins():
    x = np.random.default_rng(1).normal(size=4000)
    mi, deg = mutual_information(x, x, 8)
    assert not deg
    assert mi == pytest.approx(np.log(8), abs=1e-12)


def test_mi_degenerate_flagged():
    imp, deg = mi_importance(np.ones((100, 1)), np.arange(100.0))
    assert imp[0] == 0.0
    assert deg == [0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_mi_nonnegative(seed, bins):
    rng = np.random.default_rng(seed)
    mi, _ = mutual_information(rng.normal(size=60), rng.integers(0, 3, size=60), bins)
    assert mi >= 0


def test_pca_dominant_axis():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3000, 5)) * np.array([10.0, 0.01, 0.01, 0.01, 0.01])
    imp, _ = pca_importance(s, 1)
    assert imp[0] == pytest.approx(1.0, abs=1e-4)
    assert np.all(imp[1:] < 1e-4)


def test_pca_isotropic():
    s = np.random.default_rng(0).normal(size=(5000, 6))
    imp, _ = pca_importance(s, 6)
    assert imp.max() / imp.min() < 2


def test_pca_full_rank_sums_to_one():
    s = np.random.default_rng(1).normal(size=(500, 7))
    imp, deficient = pca_importance(s, 7)
    assert not deficient
    assert imp.sum() == pytest.approx(1.0, abs=1e-9)


def test_pca_rank_deficient_flagged():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(500, 2))
    s = np.concatenate([a, a @ rng.normal(size=(2, 3))], axis=1)
    imp, deficient = pca_importance(s, 5)
    assert deficient
    assert imp.sum() == pytest.approx(1.0, abs=1e-9)


def test_pca_k_range():
    with pytest.raises(ValueError):
        pca_importance(np.zeros((10, 3)), 4)


def test_lasso_large_alpha_is_zero():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(100, 4)), rng.normal(size=100)
    w, _ = lasso_cd(x, y, 1e6)
    assert np.all(w == 0)


def test_lasso_soft_threshold_closed_form():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 1))
    y = 2.0 * x[:, 0] + rng.normal(size=50)
    alpha = 5.0
    rho = float(x[:, 0] @ y)
    expect = np.sign(rho) * max(abs(rho) - alpha, 0.0) / float(x[:, 0] @ x[:, 0])
    w, _ = lasso_cd(x, y, alpha)
    assert w[0] == pytest.approx(expect, rel=1e-12)


def test_lasso_small_alpha_matches_least_squares():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(200, 5))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0, 3.0]) + 0.1 * rng.normal(size=200)
    w, _ = lasso_cd(x, y, 1e-8, tol=1e-14)
    ref = np.linalg.solve(x.T @ x + 1e-12 * np.eye(5), x.T @ y)
    assert np.max(np.abs(w - ref)) < 1e-3


def test_lasso_reports_gap_on_failure():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(100, 20))
    x[:, 1] = x[:, 0] + 1e-9 * rng.normal(size=100)
    with pytest.raises(ConvergenceError) as exc:
        lasso_cd(x, rng.normal(size=100), 1e-3, tol=1e-30, max_sweeps=3)
    assert exc.value.gap > 0


def test_lasso_alpha_positive():
    with pytest.raises(ValueError):
        lasso_cd(np.ones((3, 1)), np.ones(3), 0.0)


def test_collinear_columns_merged():
    a = np.random.default_rng(0).normal(size=(30, 2))
    x = np.stack([a[:, 0], 2 * a[:, 0], a[:, 1], -a[:, 0]], axis=1)
    assert collinear_representatives(x).tolist() == [0, 2]


def test_lasso_importance_handles_saturated_neurons():
    rng = np.random.default_rng(6)
    s = np.concatenate([rng.uniform(-1, 1, size=(300, 3)), np.ones((300, 2)), -np.ones((300, 1))], axis=1)
    y = s[:, :1] * 2 + 0.05 * rng.normal(size=(300, 1))
    imp, a = lasso_importance(s, y)
    assert a == default_alpha(s - s.mean(axis=0), y - y.mean(axis=0))
    assert np.argmax(imp) == 0
    assert np.all(imp[3:] == 0)


@pytest.mark.parametrize("kind", PRUNER_KINDS)
def test_every_pruner_feeds_prune(q6, kind):
    qm, cal = q6
    rep = pruner_report(kind, qm, cal, seed=0)
    assert rep.kind == kind
    assert len(rep.scores) == len(qm.positions)
    assert np.all(np.isfinite(rep.scores))
    assert len(rep.ranking) == len(qm.positions)
    pm0 = prune(qm, rep, 0)
    assert pm0.checksum() == qm.checksum()
    pm = prune(qm, rep, 30)
    assert len(pm.positions) < len(qm.positions)


def test_baseline_scores_follow_destination_neuron(q6):
    qm, cal = q6
    rep = pruner_report("spearman", qm, cal)
    s, y = calibration_trace(qm, cal)
    imp = spearman_importance(s, y)
    for (i, _), sc in zip(rep.positions, rep.scores):
        assert sc == imp[i]


def test_classification_order_invariance():
    ds = gen_synthetic_classification(3, 20, 30, 10, seed=0)
    m = fit(init_reservoir(Hyperparams(ncrl=40, bias_scaling=0.5), 10, 1, seed=0), ds)
    qm = quantize_model(m, 6, input_range(ds))
    cal = calibration_slice(qm, ds)
    perm = np.random.default_rng(0).permutation(len(cal.targets))
    shuffled = replace(cal, u_int=cal.u_int[perm], targets=cal.targets[perm])
    for kind in ("spearman", "mutual_information", "pca", "lasso"):
        a = pruner_report(kind, qm, cal).scores
        b = pruner_report(kind, qm, shuffled).scores
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12), kind


def test_unknown_pruner(q6):
    qm, cal = q6
    with pytest.raises(ValueError):
        pruner_report("magnitude", qm, cal)
