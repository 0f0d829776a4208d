"""Bit-flip sensitivity of quantized recurrent weights, ranking, and pruning.

A weight's score is the mean, over its q bit positions, of the absolute change
in calibration performance when that single bit is flipped. Every structural
connection is scored, including those whose quantized value is 0.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyDatasetError, InvalidSparsityError, QuantizationError
from .quant import Calibration, QuantizedModel, round_half_away, with_structure
from .reservoir import Performance

SCHEMA_VERSION = 1
CHUNK = 256

PRUNER_KINDS = ("sensitivity", "random", "mutual_information", "spearman", "pca", "lasso")


def flip_bit(w_int, b: int, q: int):
    """Flip bit ``b`` (1 = LSB) of a q-bit two's-complement integer."""
    bb = np.asarray(b, dtype=np.int64)
    if np.any(bb < 1) or np.any(bb > q):
        raise ValueError(f"bit position {b} outside [1, {q}]")
    w = np.asarray(w_int, dtype=np.int64)
    lo, hi = -(1 << (q - 1)), (1 << (q - 1)) - 1
    if np.any(w < lo) or np.any(w > hi):
        raise ValueError(f"value outside {q}-bit range")
    mask = (1 << q) - 1
    u = (w & mask) ^ (np.int64(1) << (bb - 1))
    out = np.where(u >= (1 << (q - 1)), u - (1 << q), u)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SensitivityReport:
    kind: str
    positions: np.ndarray  # (m, 2) row-major sorted
    scores: np.ndarray  # (m,)
    q: int
    calibration: str
    base_perf: Optional[Performance] = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.scores) != len(self.positions):
            raise ValueError("one score per structural weight required")

    @property
    def ranking(self) -> np.ndarray:
        return rank_weights(self)

    def score_map(self):
        return {(int(i), int(j)): float(s) for (i, j), s in zip(self.positions, self.scores)}

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "sensitivity_report",
            "pruner": self.kind,
            "q": self.q,
            "calibration": self.calibration,
            "base_perf": None if self.base_perf is None else self.base_perf.to_dict(),
            "positions": self.positions.tolist(),
            "scores": [float(s) for s in self.scores],
            "ranking": self.ranking.tolist(),
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        bp = d.get("base_perf")
        return cls(
            kind=d["pruner"],
            positions=np.asarray(d["positions"], dtype=np.int64).reshape(-1, 2),
            scores=np.asarray(d["scores"], dtype=float),
            q=int(d["q"]),
            calibration=d["calibration"],
            base_perf=None if bp is None else Performance.from_dict(bp),
            flags=d.get("flags", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def rank_weights(report: SensitivityReport) -> np.ndarray:
    """Positions sorted by ascending score, ties by (row, column)."""
    pos = report.positions
    if len(pos) == 0:
        return pos.copy()
    order = np.lexsort((pos[:, 1], pos[:, 0], report.scores))
    return pos[order]


# -- scoring -------------------------------------------------------------------


def _variant_states(qm: QuantizedModel, u_int, rows, cols, deltas):
    """States of ``V`` single-weight variants: w_r[rows[v], cols[v]] += deltas[v].

    Returns int16 codes shaped ``(V, E, L, N)``.
    """
    V = len(rows)
    E, L, _ = u_int.shape
    n = qm.n
    drive = u_int.astype(np.float64) @ qm.w_in_int.T.astype(np.float64) + qm.bias_int.astype(np.float64)
    w_rt = qm.w_r_int.T.astype(np.float64).copy()
    d = np.asarray(deltas, dtype=np.float64)[:, None]
    vi = np.repeat(np.arange(V), E)
    ei = np.tile(np.arange(E), V)
    ri = np.repeat(rows, E)
    ci = np.repeat(cols, E)
    dd = np.repeat(d[:, 0], E)
    s = np.zeros((V, E, n))
    out = np.empty((V, E, L, n), dtype=np.int16)
    lim = float(1 << (qm.acc_bits - 1))
    for t in range(L):
        acc = s @ w_rt
        acc += drive[None, :, t, :]
        acc[vi, ei, ri] += dd * s[vi, ei, ci]
        if acc.max() > lim - 1 or acc.min() < -lim:
            raise QuantizationError(f"accumulator exceeds {qm.acc_bits} bits")
        codes = qm.thresholds.apply(acc)
        out[:, :, t, :] = codes
        s = codes.astype(np.float64)
    return out


def _score_chunk(qm: QuantizedModel, calib: Calibration, rows, cols, deltas):
    states = _variant_states(qm, calib.u_int, rows, cols, deltas)
    return [calib.perf(qm.w_out, states[v], qm.state_scale).value for v in range(len(rows))]


def _score_chunk_job(args):
    return _score_chunk(*args)


def flip_table(qm: QuantizedModel):
    """All (weight, bit) variants in (weight index, bit) order."""
    pos = qm.positions
    vals = qm.w_r_int[pos[:, 0], pos[:, 1]] if len(pos) else np.zeros(0, dtype=np.int64)
    rows = np.repeat(pos[:, 0], qm.q)
    cols = np.repeat(pos[:, 1], qm.q)
    bits = np.tile(np.arange(1, qm.q + 1), len(pos))
    old = np.repeat(vals, qm.q)
    return rows, cols, bits, flip_bit(old, bits, qm.q) - old


def base_perf(qm: QuantizedModel, calib: Calibration) -> Performance:
    key = ("calibration", calib.identifier)
    if key not in qm.perf_cache:
        states = _variant_states(qm, calib.u_int, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), [0.0])
        qm.perf_cache[key] = calib.perf(qm.w_out, states[0], qm.state_scale)
    return qm.perf_cache[key]


def sensitivity_scores(qm: QuantizedModel, calib: Calibration, jobs: int = 1) -> SensitivityReport:
    """Score every structural recurrent weight of ``qm`` on ``calib``."""
    if calib.u_int.size == 0 or len(calib.targets) == 0:
        raise EmptyDatasetError("calibration set is empty")
    before = qm.checksum()
    base = base_perf(qm, calib)
    rows, cols, _, deltas = flip_table(qm)
    spans = [(k, min(k + CHUNK, len(rows))) for k in range(0, len(rows), CHUNK)]
    args = [(qm, calib, rows[a:b], cols[a:b], deltas[a:b]) for a, b in spans]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_score_chunk_job, args))
    else:
        parts = [_score_chunk(*a) for a in args]
    perfs = [v for part in parts for v in part]
    scores = np.empty(len(qm.positions))
    for k in range(len(qm.positions)):
        devs = [abs(base.value - perfs[k * qm.q + b]) for b in range(qm.q)]
        scores[k] = sum(devs) / qm.q
    if qm.checksum() != before:
        raise RuntimeError("model modified during sensitivity sweep")
    return SensitivityReport("sensitivity", qm.positions.copy(), scores, qm.q, calib.identifier, base)


def sensitivity_score(qm: QuantizedModel, weight_index, calib: Calibration) -> float:
    """Score of a single weight given as a (row, col) pair."""
    i, j = int(weight_index[0]), int(weight_index[1])
    hit = np.flatnonzero((qm.positions[:, 0] == i) & (qm.positions[:, 1] == j))
    if len(hit) == 0:
        raise IndexError(f"({i}, {j}) is not a structural weight")
    base = base_perf(qm, calib)
    w = int(qm.w_r_int[i, j])
    deltas = [flip_bit(w, b, qm.q) - w for b in range(1, qm.q + 1)]
    perfs = _score_chunk(qm, calib, np.full(qm.q, i), np.full(qm.q, j), deltas)
    return sum(abs(base.value - p) for p in perfs) / qm.q


# -- pruning ---------------------------------------------------------------------


@dataclass(frozen=True)
class PruneMask:
    pruned: np.ndarray  # (k, 2)
    rate: float

    def as_set(self):
        return {(int(i), int(j)) for i, j in self.pruned}

    def to_dict(self):
        return {"rate": self.rate, "pruned": self.pruned.tolist()}


def prune_count(p: float, m: int) -> int:
    if not 0 <= p <= 100:
        raise InvalidSparsityError(f"pruning rate {p} outside [0, 100]")
    return int(round_half_away(p * m / 100.0))


def prune_mask(ranking, p: float) -> PruneMask:
    ranking = np.asarray(ranking, dtype=np.int64).reshape(-1, 2)
    k = prune_count(p, len(ranking))
    return PruneMask(ranking[:k].copy(), float(p))


def prune(qm: QuantizedModel, ranking, p: float) -> QuantizedModel:
    """Remove the first ``round(p% * m)`` ranked weights. ``qm`` is left untouched."""
    if isinstance(ranking, SensitivityReport):
        ranking = rank_weights(ranking)
    mask = prune_mask(ranking, p)
    if len(mask.pruned) == 0:
        return with_structure(qm, qm.w_r_int.copy(), qm.positions.copy(), mask.pruned, float(p))
    gone = mask.as_set()
    struct = {(int(i), int(j)) for i, j in qm.positions}
    if not gone <= struct:
        raise ValueError("ranking references non-structural weights")
    w_r = qm.w_r_int.copy()
    w_r[mask.pruned[:, 0], mask.pruned[:, 1]] = 0
    keep = np.array([(int(i), int(j)) not in gone for i, j in qm.positions], dtype=bool)
    pruned = np.concatenate([qm.pruned, mask.pruned]) if len(qm.pruned) else mask.pruned
    pruned = pruned[np.lexsort((pruned[:, 1], pruned[:, 0]))]
    return with_structure(qm, w_r, qm.positions[keep].copy(), pruned, float(p))
