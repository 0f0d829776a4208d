"""Exit criteria. Each test carries ``criterion(n)``; the terminal summary
prints one PASS/FAIL line per criterion."""

import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_scores, toy_models
from rcprune.cli import EXIT_OK, main
from rcprune.data import gen_henon, input_range, normalize
from rcprune.dse import explore
from rcprune.errors import ThresholdError
from rcprune.quant import build_thresholds, calibration_slice, quantize_model, quantized_forward
from rcprune.reservoir import Hyperparams, evaluate, fit, init_reservoir
from rcprune.rtl import estimate_cost, interpret_netlist, lower
from rcprune.sensitivity import PRUNER_KINDS, sensitivity_scores

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = range(5)
P_ALL = (0, 15, 30, 45, 60, 75, 90)


@pytest.fixture(scope="module")
def henon_grid(henon_model, henon):
    return explore(henon_model, henon, Q=(4, 6, 8), P=P_ALL)


@pytest.fixture(scope="module")
def q8_sweeps(henon):
    """Median-over-seeds perf at q=8 for every pruner and rate."""
    perf = {}
    for s in SEEDS:
        m = fit(init_reservoir(Hyperparams(), 50, 1, seed=s), henon)
        res = explore(m, henon, Q=(8,), P=P_ALL, pruners=PRUNER_KINDS, seed=s)
        for c in res.configs:
            assert c.ok, c.error
            perf.setdefault((c.p, c.pruner), []).append(c.perf.value)
    return {k: float(np.median(v)) for k, v in perf.items()}


@pytest.mark.criterion(1)
def test_c1_float_baseline_rmse():
    t0 = time.perf_counter()
    ds = normalize(gen_henon())
    assert (ds.n_train, ds.n_test) == (4000, 1000)
    vals = []
    for s in SEEDS:
        m = fit(init_reservoir(Hyperparams(sr=0.9, lr=1.0, ncrl=250, ridge=1e-8), 50, 1, seed=s), ds)
        vals.append(evaluate(m, ds).value)
    elapsed = time.perf_counter() - t0
    med = float(np.median(vals))
    print(f"float RMSE per seed {np.round(vals, 4).tolist()} median {med:.4f} in {elapsed:.1f}s")
    assert med <= 0.05
    assert elapsed < 30


@pytest.mark.criterion(2)
def test_c2_sensitivity_matches_brute_force():
    t0 = time.perf_counter()
    models = toy_models(20, seed0=0)
    for qm, ds in models:
        assert qm.n <= 5 and qm.q <= 3 and len(qm.positions) <= 8
        cal = calibration_slice(qm, ds)
        got = sensitivity_scores(qm, cal).scores
        assert np.array_equal(got, brute_force_scores(qm, cal))
    assert time.perf_counter() - t0 < 60


def _composed_activation(acc, s_acc, q):
    """quantize(hardtanh(dequantize(acc))), spelled out step by step."""
    x = acc.astype(np.float64) / s_acc
    h = np.minimum(np.maximum(x, -1.0), 1.0)
    v = h * float(2 ** (q - 1))
    code = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(code, -(2 ** (q - 1)), 2 ** (q - 1) - 1).astype(np.int64)


@pytest.mark.criterion(3)
def test_c3_threshold_activation_exhaustive(henon_model, henon):
    t0 = time.perf_counter()
    r = input_range(henon)
    checked = 0
    for q in range(1, 9):
        qm = quantize_model(henon_model, q, r)
        half = 1 << (qm.acc_bits - 1)
        acc = np.arange(-half, half, dtype=np.int64)
        assert np.array_equal(qm.thresholds.apply(acc), _composed_activation(acc, qm.acc_scale, q))
        checked += len(acc)
        # scales away from the trained model, including non-dyadic ones
        for s_acc in (2.0 ** (q - 1), 3.7 * 2 ** (q - 1), 1000.3):
            try:
                table = build_thresholds(q, s_acc)
            except ThresholdError:
                continue
            acc = np.arange(-4 * int(s_acc) - 8, 4 * int(s_acc) + 8, dtype=np.int64)
            assert np.array_equal(table.apply(acc), _composed_activation(acc, s_acc, q))
    print(f"{checked} accumulator values checked")
    assert time.perf_counter() - t0 < 10


@pytest.mark.criterion(4)
def test_c4_netlist_bit_exact(henon_grid, henon):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    r = input_range(henon)
    n = 0
    for c in henon_grid.configs:
        if c.p not in (0, 15, 45, 75, 90):
            continue
        # slightly beyond the input range so clamping is exercised too
        series = rng.uniform(-1.1 * r, 1.1 * r, size=(100, 64, 1))
        ref = quantized_forward(c.model, series)
        assert np.array_equal(interpret_netlist(lower(c.model), ref.u_int), ref.y_int), c.key
        n += 1
    assert n == 15
    assert time.perf_counter() - t0 < 300


@pytest.mark.criterion(5)
def test_c5_sensitivity_beats_baselines(q8_sweeps):
    for p in (45.0, 75.0):
        meds = {k: q8_sweeps[(p, k)] for k in PRUNER_KINDS}
        print(f"p={p:g}: " + ", ".join(f"{k}={v:.4f}" for k, v in meds.items()))
        assert meds["sensitivity"] <= meds["random"]
        assert meds["sensitivity"] < max(meds.values())


@pytest.mark.criterion(6)
def test_c6_graceful_degradation(q8_sweeps):
    curve = [q8_sweeps[(float(p), "sensitivity")] for p in P_ALL]
    print("median RMSE by p: " + ", ".join(f"{v:.4f}" for v in curve))
    for a, b in zip(curve, curve[1:]):
        assert b >= a / 1.1


@pytest.mark.criterion(7)
def test_c7_cost_strictly_decreasing(henon_grid):
    for q in (4, 6, 8):
        luts = [estimate_cost(lower(henon_grid.get(q, p, "sensitivity").model)).est_luts for p in P_ALL]
        print(f"q={q} est_luts: {luts}")
        assert all(a > b for a, b in zip(luts, luts[1:]))


@pytest.mark.criterion(8)
def test_c8_dse_integrity(henon_model, henon, henon_grid):
    t0 = time.perf_counter()
    res = explore(henon_model, henon, Q=(4, 6, 8), P=(15, 30, 45, 60, 75, 90))
    assert time.perf_counter() - t0 < 600
    assert len(res.configs) == 18
    assert all(c.ok and c.pruner == "sensitivity" for c in res.configs)
    assert len({c.key for c in res.configs}) == 18
    for q in (4, 6, 8):
        masks = [{tuple(x) for x in res.get(q, p, "sensitivity").pruned.tolist()} for p in res.p_grid]
        assert all(a < b for a, b in zip(masks, masks[1:]))
        c0 = henon_grid.get(q, 0, "sensitivity")
        assert len(c0.pruned) == 0
        assert c0.perf.value == c0.base_perf.value
        assert c0.base_perf == res.get(q, 15, "sensitivity").base_perf


@pytest.mark.criterion(9)
def test_c9_reports_identical_across_jobs(tmp_path):
    cfg = str(CONFIGS / "henon.yaml")
    outs = []
    for jobs in (1, 4):
        out = tmp_path / f"jobs{jobs}"
        assert main(["run", "--config", cfg, "--out", str(out), "--jobs", str(jobs)]) == EXIT_OK
        outs.append(out / "report")
    a = {p.name: p.read_bytes() for p in sorted(outs[0].iterdir())}
    b = {p.name: p.read_bytes() for p in sorted(outs[1].iterdir())}
    assert {"henon.csv", "henon.json", "henon_perf_vs_rate.png", "henon_perf_vs_cost.png"} <= set(a)
    assert a == b
