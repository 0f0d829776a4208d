from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcprune.errors import AccumulatorOverflowError, QuantizationError, ThresholdError
from rcprune.quant import (
    QuantizedModel,
    QuantParams,
    accumulator_bits,
    build_thresholds,
    calibration_slice,
    compute_quant_params,
    dequantize,
    evaluate_quantized,
    quantize,
    quantize_model,
    quantized_forward,
    reference_activation,
    round_half_away,
    run_quantized,
    signed_bits,
    state_params,
)
from rcprune.reservoir import Hyperparams, evaluate, fit, init_reservoir
from rcprune.data import gen_henon, input_range, normalize


@pytest.fixture(scope="module")
def small():
    ds = normalize(gen_henon(1200))
    m = fit(init_reservoir(Hyperparams(ncrl=40), 12, 1, seed=4), ds)
    return m, ds


def _naive_states(qm, u_int):
    """Step-by-step integer recurrence with the float-composed activation."""
    s = np.zeros(qm.n, dtype=np.int64)
    rows = []
    for t in range(len(u_int)):
        acc = qm.w_in_int @ u_int[t] + qm.bias_int + qm.w_r_int @ s
        s = reference_activation(acc, qm.acc_scale, qm.q)
        rows.append(s)
    return np.array(rows)


def test_scale_unit_peak():
    p = compute_quant_params(np.array([0.2, -1.0, 0.5]), 4)
    assert p.scale == 7.0
    assert p.bias == 0.0
    assert not p.flagged


def test_scale_zero_tensor_flagged():
    p = compute_quant_params(np.zeros(5), 6)
    assert p.scale == 1.0
    assert p.flagged


def test_scale_derived():
    assert compute_quant_params(np.array([-2.0, 0.5]), 8).scale == 63.5


def test_scale_rejects_nonfinite():
    with pytest.raises(QuantizationError):
        compute_quant_params(np.array([1.0, np.inf]), 4)


def test_quantize_identity_on_integers():
    p = QuantParams(1.0, 8)
    x = np.arange(-128, 128)
    assert np.array_equal(quantize(x, p), x)


def test_quantize_examples():
    p = QuantParams(7.0, 4)
    assert quantize(-1.0, p) == -7
    assert quantize(0.5, p) == 4
    assert quantize(-0.5, p) == -4


def test_quantize_clamps():
    p = QuantParams(7.0, 4)
    assert quantize(5.0, p) == 7
    assert quantize(-5.0, p) == -8


def test_dequantize_examples():
    p = QuantParams(7.0, 4, bias=0.25)
    assert dequantize(0, p) == 0.25
    assert dequantize(-8, p) == -8 / 7 + 0.25


def test_round_half_away():
    assert np.array_equal(round_half_away([0.5, 1.5, -0.5, -2.5, 2.4]), [1, 2, -1, -3, 2])


def test_signed_bits():
    assert signed_bits(-8, 7) == 4
    assert signed_bits(-9, 7) == 5
    assert signed_bits(0, 0) == 1
    assert signed_bits(0, 1) == 2


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 8),
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30),
)
def test_round_trip_error_bound(q, vals):
    x = np.asarray(vals)
    p = compute_quant_params(x, q)
    if p.flagged or q == 1:
        return
    err = np.abs(x - dequantize(quantize(x, p), p))
    assert np.all(err <= 0.5 / p.scale + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30))
def test_codes_in_range(q, vals):
    x = np.asarray(vals)
    codes = quantize(x, compute_quant_params(x, q))
    assert codes.min() >= -(1 << (q - 1))
    assert codes.max() <= (1 << (q - 1)) - 1


def test_state_params():
    sp = state_params(4)
    assert (sp.scale, sp.lo, sp.hi) == (8.0, -8, 7)


def test_threshold_q1():
    t = build_thresholds(1, 64.0)
    assert len(t.thresholds) == 1
    assert t.codes.tolist() == [-1, 0]
    acc = np.arange(-200, 200)
    assert np.array_equal(t.apply(acc), reference_activation(acc, 64.0, 1))


def test_threshold_q4_exhaustive():
    s = 8.0 * 53.7
    t = build_thresholds(4, s)
    assert len(t.thresholds) == 15
    acc = np.arange(-4 * int(s), 4 * int(s) + 1)
    assert np.array_equal(t.apply(acc), reference_activation(acc, s, 4))


def test_threshold_saturation():
    t = build_thresholds(4, 100.0)
    assert t.apply(np.array([-10**9]))[0] == -8
    assert t.apply(np.array([10**9]))[0] == 7


def test_threshold_precondition():
    # a scale below one accumulator step per state code collapses thresholds
    with pytest.raises(ThresholdError):
        build_thresholds(3, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(1.0, 50.0))
def test_threshold_monotone_and_exact(q, mult):
    s = (1 << (q - 1)) * mult
    t = build_thresholds(q, s)
    assert np.all(np.diff(t.thresholds) > 0)
    assert np.all(np.diff(t.codes) >= 0)
    span = int(2 * s) + 4
    acc = np.arange(-span, span + 1)
    out = t.apply(acc)
    assert np.all(np.diff(out) >= 0)
    assert np.array_equal(out, reference_activation(acc, s, q))


def test_accumulator_bits_lower_bound():
    assert accumulator_bits(4, 50, 1, 4, np.zeros(50, dtype=int)) >= 2 * 4 + 6 + 1


def test_quantize_model_requires_lr_one(small):
    m, _ = small
    with pytest.raises(QuantizationError, match="leaking"):
        quantize_model(replace(m, hp=replace(m.hp, lr=0.5)), 4)


def test_quantize_model_requires_training():
    m = init_reservoir(Hyperparams(ncrl=10), 5, 1)
    with pytest.raises(QuantizationError):
        quantize_model(m, 4)


@pytest.mark.parametrize("q", [1, 2, 4, 6, 8])
def test_quantized_model_integer_ranges(small, q):
    m, ds = small
    qm = quantize_model(m, q, input_range(ds))
    lo, hi = -(1 << (q - 1)), (1 << (q - 1)) - 1
    for arr in (qm.w_in_int, qm.w_r_int, qm.w_out_int):
        assert arr.min() >= lo and arr.max() <= hi
    # only structural positions carry weights
    mask = np.zeros_like(qm.w_r_int, dtype=bool)
    mask[qm.positions[:, 0], qm.positions[:, 1]] = True
    assert np.all(qm.w_r_int[~mask] == 0)
    assert qm.acc_bits >= 2 * q + int(np.ceil(np.log2(qm.n))) + 1


def test_input_port_holds_training_range(small):
    m, ds = small
    qm = quantize_model(m, 6, input_range(ds))
    u = qm.input_params
    codes = quantize(ds.train_inputs, QuantParams(u.scale, 30))
    assert codes.min() >= u.lo and codes.max() <= u.hi


@pytest.mark.parametrize("q", [1, 3, 4, 8])
def test_forward_matches_naive_recurrence(small, q):
    m, ds = small
    qm = quantize_model(m, q, input_range(ds))
    out = quantized_forward(qm, ds.inputs[:300])
    assert np.array_equal(out.states, _naive_states(qm, out.u_int))
    assert np.array_equal(out.y_int, out.states @ qm.w_out_int.T)


def test_forward_batched_equals_single(small):
    m, ds = small
    qm = quantize_model(m, 4, input_range(ds))
    u = np.stack([ds.inputs[k * 50:(k + 1) * 50] for k in range(4)])
    batch = quantized_forward(qm, u)
    for k in range(4):
        single = quantized_forward(qm, u[k])
        assert np.array_equal(batch.states[k], single.states)
        assert np.array_equal(batch.y[k], single.y)


def test_forward_deterministic(small):
    m, ds = small
    qm = quantize_model(m, 6, input_range(ds))
    a = quantized_forward(qm, ds.inputs)
    b = quantized_forward(qm, ds.inputs)
    assert np.array_equal(a.y, b.y)


def test_all_zero_weights_give_zero_outputs(small):
    m, ds = small
    qm = quantize_model(m, 4, input_range(ds))
    z = replace(
        qm, w_in_int=np.zeros_like(qm.w_in_int), w_r_int=np.zeros_like(qm.w_r_int),
        bias_int=np.zeros_like(qm.bias_int), perf_cache={},
    )
    out = quantized_forward(z, ds.inputs[:100])
    assert np.all(out.y == 0) and np.all(out.y_int == 0)


def test_overflow_detected(small):
    m, ds = small
    qm = quantize_model(m, 8, input_range(ds))
    tight = replace(qm, acc_bits=3, perf_cache={})
    with pytest.raises(AccumulatorOverflowError):
        run_quantized(tight, quantize(ds.inputs[:20], qm.input_params))


def test_base_perf_cached(small):
    m, ds = small
    qm = quantize_model(m, 4, input_range(ds))
    p1 = evaluate_quantized(qm, ds)
    assert len(qm.perf_cache) == 1
    assert evaluate_quantized(qm, ds) is p1


def test_three_bitwidths_evaluable(henon_model, henon):
    r = input_range(henon)
    perfs = [evaluate_quantized(quantize_model(henon_model, q, r), henon).value for q in (4, 6, 8)]
    assert all(np.isfinite(perfs))


def test_q8_close_to_float(henon_model, henon):
    fl = evaluate(henon_model, henon).value
    q8 = evaluate_quantized(quantize_model(henon_model, 8, input_range(henon)), henon).value
    assert q8 <= 2 * fl


def test_json_round_trip(tmp_path, small):
    m, ds = small
    qm = quantize_model(m, 5, input_range(ds))
    p = tmp_path / "qm.json"
    qm.save(p)
    back = QuantizedModel.load(p)
    assert back.checksum() == qm.checksum()
    assert np.array_equal(quantized_forward(back, ds.inputs[:200]).y, quantized_forward(qm, ds.inputs[:200]).y)


def test_calibration_slice_layout(small):
    m, ds = small
    qm = quantize_model(m, 4, input_range(ds))
    cal = calibration_slice(qm, ds)
    n_cal = int(round(ds.n_train * 0.2))
    assert cal.u_int.shape == (1, n_cal + cal.warmup, 1)
    assert len(cal.targets) == n_cal
    assert np.array_equal(cal.targets, ds.targets[ds.n_train - n_cal: ds.n_train])
    assert "train[" in cal.identifier
