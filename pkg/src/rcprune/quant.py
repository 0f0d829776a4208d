"""Fixed-point quantization of a trained reservoir and its integer-only forward pass.

Integer domain, for bit-width ``q``:

* weights: symmetric per-tensor scale, codes in ``[-2^(q-1), 2^(q-1) - 1]``;
* states: Q1.(q-1) fixed point, i.e. scale ``2^(q-1)``, so a state code ``c``
  stands for ``c / 2^(q-1)`` in ``[-1, 1)``;
* accumulator: ``w_in_int @ u_int + bias_int + w_r_int @ s_int`` at scale
  ``acc_scale = scale(w_r) * 2^(q-1)``. The input scale is chosen so the input
  product lands on that same scale, and the bias is pre-quantized into it;
* activation: hardtanh followed by state quantization, streamlined into a
  table of integer thresholds on the accumulator.

All integer arithmetic is carried out in float64 (BLAS), which is exact
because every operand and partial sum stays far below 2^53; this is checked
when a model is built.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path


import numpy as np

from .data import REGRESSION, TimeSeriesDataset
from .errors import AccumulatorOverflowError, EmptyDatasetError, QuantizationError, ThresholdError
from .reservoir import Performance, ReservoirModel, rmse, sequence_accuracy, washout_length

SCHEMA_VERSION = 1
MAX_EXACT_BITS = 52


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def signed_bits(lo, hi) -> int:
    """Smallest two's-complement width holding every integer in ``[lo, hi]``."""
    w = 1
    while lo < -(1 << (w - 1)) or hi > (1 << (w - 1)) - 1:
        w += 1
    return w


@dataclass(frozen=True)
class QuantParams:
    scale: float
    bits: int
    bias: float = 0.0
    flagged: bool = False  # degenerate (all-zero) tensor

    def __post_init__(self):
        if not self.scale > 0:
            raise QuantizationError(f"scale must be positive, got {self.scale}")
        if self.bits < 1:
            raise QuantizationError("bit-width must be >= 1")

    @property
    def lo(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def hi(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def to_dict(self):
        return {"scale": self.scale, "bias": self.bias, "bits": self.bits, "flagged": self.flagged}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), int(d["bits"]), float(d.get("bias", 0.0)), bool(d.get("flagged", False)))


def _check_q(q):
    if not 1 <= int(q) <= 8:
        raise QuantizationError(f"bit-width q={q} outside [1, 8]")


def compute_quant_params(tensor, q: int) -> QuantParams:
    """Symmetric scheme: the largest magnitude maps to the largest positive code.

    For ``q = 1`` there is no positive code, so the largest magnitude maps to 1
    (which then clamps).
    """
    _check_q(q)
    x = np.asarray(tensor, dtype=float)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise QuantizationError("tensor must be nonempty and finite")
    peak = float(np.max(np.abs(x)))
    if peak == 0:
        return QuantParams(1.0, q, 0.0, flagged=True)
    return QuantParams(max((1 << (q - 1)) - 1, 1) / peak, q)


def quantize(tensor, p: QuantParams):
    codes = round_half_away(p.scale * (np.asarray(tensor, dtype=float) - p.bias))
    return np.clip(codes, p.lo, p.hi).astype(np.int64)


def dequantize(x_int, p: QuantParams):
    return np.asarray(x_int, dtype=float) / p.scale + p.bias


def state_params(q: int) -> QuantParams:
    return QuantParams(float(1 << (q - 1)), q)


# -- streamlined activation --------------------------------------------------


def reference_activation(acc, acc_scale: float, q: int):
    """quantize(hardtanh(dequantize(acc))) evaluated in floating point."""
    x = np.asarray(acc, dtype=float) / acc_scale
    return quantize(np.clip(x, -1.0, 1.0), state_params(q))


@dataclass(frozen=True)
class ThresholdTable:
    """Multi-threshold activation: ``codes[#(thresholds <= acc)]``."""

    thresholds: np.ndarray  # (2^q - 1,) strictly increasing
    codes: np.ndarray  # (2^q,) non-decreasing
    acc_scale: float
    q: int

    def apply(self, acc):
        idx = np.searchsorted(self.thresholds, acc, side="right")
        return self.codes[idx]

    def to_dict(self):
        return {
            "thresholds": self.thresholds.tolist(),
            "codes": self.codes.tolist(),
            "acc_scale": self.acc_scale,
            "q": self.q,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["thresholds"], dtype=np.int64),
            np.asarray(d["codes"], dtype=np.int64),
            float(d["acc_scale"]),
            int(d["q"]),
        )


def build_thresholds(q_act: int, accumulator_scale: float) -> ThresholdTable:
    """Integer preimages of the state-code boundaries of the hardtanh quantizer.

    Threshold ``k`` is the smallest integer accumulator whose reference
    activation reaches ``codes[k]``. An analytic guess is corrected against
    the float reference itself, so the table agrees with it exactly.
    """
    _check_q(q_act)
    if not accumulator_scale > 0:
        raise QuantizationError("accumulator scale must be positive")
    sp = state_params(q_act)
    codes = np.arange(sp.lo, sp.hi + 1, dtype=np.int64)
    step = accumulator_scale / sp.scale

    def ref(a):
        return int(reference_activation(a, accumulator_scale, q_act))

    thresholds = np.empty(len(codes) - 1, dtype=np.int64)
    for k, code in enumerate(codes[1:]):
        t = math.ceil((code - 0.5) * step)
        while ref(t - 1) >= code:
            t -= 1
        while ref(t) < code:
            t += 1
        thresholds[k] = t
    if np.any(np.diff(thresholds) <= 0):
        raise ThresholdError(
            f"non-increasing thresholds for q={q_act}, accumulator scale {accumulator_scale}"
        )
    return ThresholdTable(thresholds, codes, float(accumulator_scale), q_act)


# -- quantized model -----------------------------------------------------------


@dataclass(frozen=True)
class QuantizedModel:
    q: int
    w_in_int: np.ndarray  # (N, d_in)
    w_r_int: np.ndarray  # (N, N); zero outside ``positions``
    positions: np.ndarray  # (m, 2) surviving structural connections
    bias_int: np.ndarray  # (N,) at accumulator scale
    in_params: QuantParams  # w_in
    r_params: QuantParams  # w_r
    input_params: QuantParams  # data inputs
    acc_bits: int
    thresholds: ThresholdTable
    w_out: np.ndarray  # (d_out, N) float readout
    w_out_int: np.ndarray  # (d_out, N) q-bit readout used by the hardware
    out_params: QuantParams
    pruned: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    prune_rate: float = 0.0
    source: dict = field(default_factory=dict)
    perf_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.w_r_int.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_in_int.shape[1]

    @property
    def d_out(self) -> int:
        return self.w_out.shape[0]

    @property
    def acc_scale(self) -> float:
        return self.thresholds.acc_scale

    @property
    def state_scale(self) -> float:
        return float(1 << (self.q - 1))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in (self.w_in_int, self.w_r_int, self.positions, self.bias_int, self.w_out_int):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.w_out, dtype=np.float64).tobytes())
        return h.hexdigest()

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "quantized_model",
            "q": self.q,
            "w_in_int": self.w_in_int.tolist(),
            "w_r_int": self.w_r_int.tolist(),
            "positions": self.positions.tolist(),
            "pruned": self.pruned.tolist(),
            "prune_rate": self.prune_rate,
            "bias_int": self.bias_int.tolist(),
            "quant_params": {
                "w_in": self.in_params.to_dict(),
                "w_r": self.r_params.to_dict(),
                "input": self.input_params.to_dict(),
                "w_out": self.out_params.to_dict(),
            },
            "acc_bits": self.acc_bits,
            "threshold_table": self.thresholds.to_dict(),
            "w_out": self.w_out.tolist(),
            "w_out_int": self.w_out_int.tolist(),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported quantized-model schema {d.get('schema_version')!r}")
        qp = d["quant_params"]
        n = len(d["w_r_int"])
        return cls(
            q=int(d["q"]),
            w_in_int=np.asarray(d["w_in_int"], dtype=np.int64).reshape(n, -1),
            w_r_int=np.asarray(d["w_r_int"], dtype=np.int64).reshape(n, n),
            positions=np.asarray(d["positions"], dtype=np.int64).reshape(-1, 2),
            bias_int=np.asarray(d["bias_int"], dtype=np.int64),
            in_params=QuantParams.from_dict(qp["w_in"]),
            r_params=QuantParams.from_dict(qp["w_r"]),
            input_params=QuantParams.from_dict(qp["input"]),
            acc_bits=int(d["acc_bits"]),
            thresholds=ThresholdTable.from_dict(d["threshold_table"]),
            w_out=np.asarray(d["w_out"], dtype=float).reshape(-1, n),
            w_out_int=np.asarray(d["w_out_int"], dtype=np.int64).reshape(-1, n),
            out_params=QuantParams.from_dict(qp["w_out"]),
            pruned=np.asarray(d["pruned"], dtype=np.int64).reshape(-1, 2),
            prune_rate=float(d.get("prune_rate", 0.0)),
            source=d.get("source", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def accumulator_bits(q, n, d_in, input_bits, bias_int) -> int:
    """Width covering any q-bit weights (including bit-flipped ones) and inputs."""
    half = 1 << (q - 1)
    bound = d_in * half * (1 << (input_bits - 1)) + n * half * half
    bound += int(np.max(np.abs(bias_int))) if len(bias_int) else 0
    return max(2 * q + math.ceil(math.log2(max(n, 1))) + 1, signed_bits(-bound, bound))


def quantize_model(m: ReservoirModel, q: int, input_range: float = 4.0) -> QuantizedModel:
    """Quantize a trained reservoir at bit-width ``q``.

    ``input_range`` is the largest input magnitude the input port must carry
    unclipped (typically the training-set maximum).
    """
    _check_q(q)
    if m.w_out is None:
        raise QuantizationError("quantize a trained model (w_out missing)")
    if m.lr != 1.0:
        raise QuantizationError("integer datapath requires leaking rate 1")
    in_params = compute_quant_params(m.w_in, q)
    r_vals = m.w_r[m.positions[:, 0], m.positions[:, 1]] if len(m.positions) else np.zeros(1)
    r_params = compute_quant_params(r_vals, q)
    sp = state_params(q)
    acc_scale = r_params.scale * sp.scale
    input_scale = acc_scale / in_params.scale
    peak = max(abs(float(input_range)), 1e-12)
    input_bits = signed_bits(-int(round_half_away(peak * input_scale)), int(round_half_away(peak * input_scale)))
    input_params = QuantParams(input_scale, input_bits)

    w_in_int = quantize(m.w_in, in_params)
    w_r_int = np.zeros_like(m.w_r, dtype=np.int64)
    if len(m.positions):
        w_r_int[m.positions[:, 0], m.positions[:, 1]] = quantize(r_vals, r_params)
    bias_int = round_half_away(m.bias * acc_scale).astype(np.int64)
    acc_bits = accumulator_bits(q, m.n, m.d_in, input_bits, bias_int)
    if acc_bits > MAX_EXACT_BITS:
        raise QuantizationError(f"accumulator needs {acc_bits} bits; exceeds exact float64 range")
    out_params = compute_quant_params(m.w_out, q)
    return QuantizedModel(
        q=q,
        w_in_int=w_in_int,
        w_r_int=w_r_int,
        positions=m.positions.copy(),
        bias_int=bias_int,
        in_params=in_params,
        r_params=r_params,
        input_params=input_params,
        acc_bits=acc_bits,
        thresholds=build_thresholds(q, acc_scale),
        w_out=m.w_out.copy(),
        w_out_int=quantize(m.w_out, out_params),
        out_params=out_params,
        source={"seed": m.seed, "n": m.n, "ncrl": m.ncrl, "sr": m.sr, "activation": m.activation},
    )


def quantize_inputs(qm: QuantizedModel, series):
    return quantize(series, qm.input_params)


# -- integer forward pass --------------------------------------------------------


def _check_acc(qm, acc):
    lim = float(1 << (qm.acc_bits - 1))
    if acc.size and (acc.max() > lim - 1 or acc.min() < -lim):
        raise AccumulatorOverflowError(f"accumulator exceeds {qm.acc_bits} bits")


def run_quantized(qm: QuantizedModel, u_int, w_r_int=None):
    """Integer state trajectories.

    ``u_int`` is ``(L, d_in)`` or ``(E, L, d_in)``; every episode starts from
    the zero state. Returns int64 codes shaped ``(L, N)`` or ``(E, L, N)``.
    """
    u = np.asarray(u_int)
    squeeze = u.ndim == 2
    if squeeze:
        u = u[None]
    E, L, _ = u.shape
    w_r = np.asarray(qm.w_r_int if w_r_int is None else w_r_int, dtype=np.float64)
    drive = u.astype(np.float64) @ qm.w_in_int.T.astype(np.float64) + qm.bias_int.astype(np.float64)
    s = np.zeros((E, qm.n))
    out = np.empty((E, L, qm.n), dtype=np.int64)
    w_rt = w_r.T.copy()
    for t in range(L):
        acc = drive[:, t, :] + s @ w_rt
        _check_acc(qm, acc)
        codes = qm.thresholds.apply(acc)
        out[:, t, :] = codes
        s = codes.astype(np.float64)
    return out[0] if squeeze else out


def float_readout(w_out, states_int, state_scale):
    """Float readout on dequantized states with a fixed reduction order.

    Elementwise products reduced along the neuron axis; the result depends
    only on the values, not on how the state array was produced.
    """
    s = np.array(states_int, dtype=np.float64, order="C") / state_scale
    return np.stack([(s * w_out[o]).sum(axis=-1) for o in range(w_out.shape[0])], axis=-1)


def integer_readout(qm: QuantizedModel, states_int):
    return np.asarray(states_int, dtype=np.int64) @ qm.w_out_int.T


@dataclass(frozen=True)
class QuantizedOutput:
    u_int: np.ndarray
    states: np.ndarray
    y_int: np.ndarray
    y: np.ndarray


def quantized_forward(qm: QuantizedModel, series) -> QuantizedOutput:
    """Integer forward pass on a float series (``(T, d_in)`` or ``(E, T, d_in)``)."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    u_int = quantize_inputs(qm, series)
    states = run_quantized(qm, u_int)
    return QuantizedOutput(
        u_int=u_int,
        states=states,
        y_int=integer_readout(qm, states),
        y=float_readout(qm.w_out, states, qm.state_scale),
    )


def perf_from_outputs(task, y, targets) -> Performance:
    if task == REGRESSION:
        return Performance("rmse", rmse(y, targets))
    return Performance("accuracy", sequence_accuracy(y, targets))


def evaluate_quantized(qm: QuantizedModel, ds: TimeSeriesDataset, cache=True) -> Performance:
    """Test-split performance; regression runs the whole series from the zero state."""
    if ds.n_test < 1:
        raise EmptyDatasetError("empty test split")
    key = ("test", ds.name, ds.n_train, ds.n_test)
    if cache and key in qm.perf_cache:
        return qm.perf_cache[key]
    if ds.task == REGRESSION:
        out = quantized_forward(qm, ds.inputs[: ds.n_train + ds.n_test])
        perf = perf_from_outputs(ds.task, out.y[ds.n_train:], ds.test_targets)
    else:
        out = quantized_forward(qm, ds.test_inputs)
        perf = perf_from_outputs(ds.task, out.y, ds.test_targets)
    if cache:
        qm.perf_cache[key] = perf
    return perf


# -- calibration slice --------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    """Held-out slice of the training data used to score weights.

    Regression: one episode covering ``warmup`` context steps followed by the
    scored steps. Classification: the last training sequences.
    """

    task: str
    u_int: np.ndarray  # (E, L, d_in) quantized inputs
    targets: np.ndarray  # (L - warmup, d_out) or (E,) labels
    warmup: int
    identifier: str
    n_classes: int = 0

    def perf(self, w_out, states_int, state_scale) -> Performance:
        y = float_readout(w_out, states_int, state_scale)
        if self.task == REGRESSION:
            return Performance("rmse", rmse(y[0, self.warmup:], self.targets))
        return Performance("accuracy", sequence_accuracy(y, self.targets))


def calibration_slice(qm: QuantizedModel, ds: TimeSeriesDataset, fraction=0.2, warmup=None) -> Calibration:
    if ds.task == REGRESSION:
        n_cal = int(round(ds.n_train * fraction))
        if n_cal < 1:
            raise EmptyDatasetError("calibration slice is empty")
        start = ds.n_train - n_cal
        w = washout_length(ds.n_train) if warmup is None else warmup
        w = min(w, start)
        u = quantize_inputs(qm, ds.inputs[start - w: ds.n_train])[None]
        return Calibration(
            REGRESSION, u, ds.targets[start: ds.n_train], w,
            f"{ds.name}:train[{start}:{ds.n_train}]+warmup{w}",
        )
    n_cal = int(round(ds.n_train * fraction))
    if n_cal < 1:
        raise EmptyDatasetError("calibration slice is empty")
    start = ds.n_train - n_cal
    u = quantize_inputs(qm, ds.inputs[start: ds.n_train])
    return Calibration(
        ds.task, u, ds.targets[start: ds.n_train], 0,
        f"{ds.name}:train_seq[{start}:{ds.n_train}]", ds.n_classes,
    )


def with_structure(qm: QuantizedModel, w_r_int, positions, pruned, rate) -> QuantizedModel:
    return replace(qm, w_r_int=w_r_int, positions=positions, pruned=pruned, prune_rate=rate, perf_cache={})
