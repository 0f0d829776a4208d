"""Benchmark datasets: the Henon map, synthetic sequence classification, CSV ingest.

Regression datasets are one contiguous series: ``inputs`` is ``(T, d_in)``,
``targets`` is ``(T, d_out)`` and the first ``n_train`` steps form the
training split, the following ``n_test`` steps the test split.

Classification datasets are a stack of equal-length sequences: ``inputs`` is
``(n_seq, L, d_in)``, ``targets`` holds one integer label per sequence, and
the splits count sequences rather than steps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetFormatError, DivergenceError, EmptyDatasetError

SCHEMA_VERSION = 1

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine record: ``normalized = (raw - mean) / scale``."""

    input_mean: np.ndarray
    input_scale: np.ndarray
    target_mean: Optional[np.ndarray] = None
    target_scale: Optional[np.ndarray] = None
    # channels whose training variance was zero and were left unscaled
    flagged_inputs: tuple = ()
    flagged_targets: tuple = ()

    def to_dict(self):
        out = {
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
            "flagged_inputs": list(self.flagged_inputs),
            "flagged_targets": list(self.flagged_targets),
        }
        if self.target_mean is not None:
            out["target_mean"] = self.target_mean.tolist()
            out["target_scale"] = self.target_scale.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        tm = d.get("target_mean")
        return cls(
            input_mean=np.asarray(d["input_mean"], dtype=float),
            input_scale=np.asarray(d["input_scale"], dtype=float),
            target_mean=None if tm is None else np.asarray(tm, dtype=float),
            target_scale=None if tm is None else np.asarray(d["target_scale"], dtype=float),
            flagged_inputs=tuple(d.get("flagged_inputs", ())),
            flagged_targets=tuple(d.get("flagged_targets", ())),
        )


@dataclass(frozen=True)
class TimeSeriesDataset:
    task: str
    inputs: np.ndarray
    targets: np.ndarray
    n_train: int
    n_test: int
    name: str = "dataset"
    n_classes: int = 0
    normalization: Optional[Normalization] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise DatasetFormatError(f"unknown task kind {self.task!r}")
        total = self.inputs.shape[0]
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test > total:
            raise DatasetFormatError(
                f"split ({self.n_train}, {self.n_test}) exceeds {total} available rows"
            )
        if self.task == CLASSIFICATION:
            labels = np.asarray(self.targets)
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise DatasetFormatError("labels outside [0, n_classes)")

    @property
    def d_in(self) -> int:
        return self.inputs.shape[-1]

    @property
    def d_out(self) -> int:
        if self.task == CLASSIFICATION:
            return self.n_classes
        return self.targets.shape[-1]

    @property
    def train_inputs(self):
        return self.inputs[: self.n_train]

    @property
    def train_targets(self):
        return self.targets[: self.n_train]

    @property
    def test_slice(self) -> slice:
        return slice(self.n_train, self.n_train + self.n_test)

    @property
    def test_inputs(self):
        return self.inputs[self.test_slice]

    @property
    def test_targets(self):
        return self.targets[self.test_slice]

    def validation_split(self, fraction: float = 0.2) -> "TimeSeriesDataset":
        """Dataset whose test split is the last ``fraction`` of this training split."""
        n_val = int(round(self.n_train * fraction))
        if n_val < 1 or n_val >= self.n_train:
            raise EmptyDatasetError("training split too small to carve a validation slice")
        return replace(
            self,
            inputs=self.inputs[: self.n_train],
            targets=self.targets[: self.n_train],
            n_train=self.n_train - n_val,
            n_test=n_val,
            name=f"{self.name}:validation",
        )

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "dataset",
            "name": self.name,
            "task": self.task,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_classes": self.n_classes,
            "inputs": self.inputs.tolist(),
            "targets": np.asarray(self.targets).tolist(),
            "normalization": None if self.normalization is None else self.normalization.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        task = d["task"]
        targets = np.asarray(d["targets"], dtype=np.int64 if task == CLASSIFICATION else float)
        norm = d.get("normalization")
        return cls(
            task=task,
            inputs=np.asarray(d["inputs"], dtype=float),
            targets=targets,
            n_train=int(d["n_train"]),
            n_test=int(d["n_test"]),
            name=d.get("name", "dataset"),
            n_classes=int(d.get("n_classes", 0)),
            normalization=None if norm is None else Normalization.from_dict(norm),
            meta=d.get("meta", {}),
        )

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def henon_orbit(n, a=1.4, b=0.3, x0=0.0, y0=0.0):
    """First ``n`` x-coordinates of the Henon map starting at ``(x0, y0)``."""
    xs = np.empty(n)
    x, y = float(x0), float(y0)
    for t in range(n):
        if not abs(x) <= 1e6:
            raise DivergenceError(
                f"Henon orbit diverged at step {t} for a={a}, b={b}, x0={x0}, y0={y0}"
            )
        xs[t] = x
        x, y = 1.0 - a * x * x + y, b * x
    return xs


def gen_henon(
    n_steps=5000,
    a=1.4,
    b=0.3,
    x0=0.0,
    y0=0.0,
    transient=200,
    train_fraction=0.8,
) -> TimeSeriesDataset:
    """One-step-ahead Henon regression: input ``x_t``, target ``x_{t+1}``."""
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    xs = henon_orbit(transient + n_steps + 1, a, b, x0, y0)[transient:]
    n_train = int(round(n_steps * train_fraction))
    return TimeSeriesDataset(
        task=REGRESSION,
        inputs=xs[:-1, None].copy(),
        targets=xs[1:, None].copy(),
        n_train=n_train,
        n_test=n_steps - n_train,
        name="henon",
        meta={"a": a, "b": b, "x0": x0, "y0": y0, "transient": transient},
    )


def gen_synthetic_classification(
    n_classes, seq_len, n_train, n_test, seed=0, noise=0.1
) -> TimeSeriesDataset:
    """Noisy sinusoids whose frequency encodes the class.

    Class ``c`` oscillates at ``(c + 1) / (2 (n_classes + 1))`` cycles per step,
    so all frequencies stay below Nyquist; each sequence gets a random phase.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if seq_len < 1 or n_train < 1:
        raise ValueError("seq_len and n_train must be positive")
    if n_test < 1:
        raise EmptyDatasetError("n_test must be >= 1")
    rng = np.random.default_rng(seed)
    n_seq = n_train + n_test
    labels = rng.integers(0, n_classes, size=n_seq)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_seq)
    freq = (labels + 1) / (2.0 * (n_classes + 1))
    t = np.arange(seq_len)
    x = np.sin(2.0 * np.pi * freq[:, None] * t[None, :] + phase[:, None])
    x = x + noise * rng.standard_normal(x.shape)
    return TimeSeriesDataset(
        task=CLASSIFICATION,
        inputs=x[:, :, None],
        targets=labels.astype(np.int64),
        n_train=n_train,
        n_test=n_test,
        name=f"synthetic{n_classes}",
        n_classes=n_classes,
        meta={"seed": seed, "noise": noise, "seq_len": seq_len},
    )


# -- CSV ------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for CSV ingest.

    Inputs are the ``x_<k>`` columns. Regression targets are ``target`` or
    ``target_<k>``; classification uses one ``label`` per row, constant within
    a sequence. ``n_train`` counts steps (regression) or sequences
    (classification); when omitted, ``train_fraction`` decides.
    """

    task: str = REGRESSION
    n_train: Optional[int] = None
    train_fraction: float = 0.8
    n_classes: Optional[int] = None
    name: str = "csv"


def _fmt(v):
    return repr(float(v))


def save_csv(ds: TimeSeriesDataset, path):
    d_in = ds.d_in
    header = ["seq_id", "t"] + [f"x_{k}" for k in range(d_in)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if ds.task == REGRESSION:
            d_out = ds.targets.shape[1]
            header += ["target"] if d_out == 1 else [f"target_{k}" for k in range(d_out)]
            w.writerow(header)
            for t in range(ds.inputs.shape[0]):
                w.writerow([0, t] + [_fmt(v) for v in ds.inputs[t]] + [_fmt(v) for v in ds.targets[t]])
        else:
            w.writerow(header + ["label"])
            for s in range(ds.inputs.shape[0]):
                for t in range(ds.inputs.shape[1]):
                    w.writerow([s, t] + [_fmt(v) for v in ds.inputs[s, t]] + [int(ds.targets[s])])


def load_csv(path, schema: CsvSchema = CsvSchema()) -> TimeSeriesDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty file") from None
        rows = [(i + 2, r) for i, r in enumerate(reader) if r]
    col = {name: k for k, name in enumerate(header)}
    for required in ("seq_id", "t"):
        if required not in col:
            raise DatasetFormatError(f"{path}: missing column {required!r}")
    x_cols = sorted((c for c in header if c.startswith("x_")), key=lambda c: int(c[2:]))
    if not x_cols:
        raise DatasetFormatError(f"{path}: no input columns x_0..x_{{d-1}}")
    if schema.task == REGRESSION:
        y_cols = [c for c in header if c == "target" or c.startswith("target_")]
        if not y_cols:
            raise DatasetFormatError(f"{path}: regression schema needs a target column")
    else:
        if "label" not in col:
            raise DatasetFormatError(f"{path}: classification schema needs a label column")
        y_cols = ["label"]
    if not rows:
        raise EmptyDatasetError(f"{path}: header only, no data rows")

    seqs: dict = {}
    for lineno, r in rows:
        if len(r) != len(header):
            raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(r)}")
        try:
            sid = int(r[col["seq_id"]])
            xs = [float(r[col[c]]) for c in x_cols]
            ys = [float(r[col[c]]) for c in y_cols]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        seqs.setdefault(sid, []).append((lineno, xs, ys))

    if schema.task == REGRESSION:
        (only,) = seqs.values() if len(seqs) == 1 else (None,)
        if only is None:
            raise DatasetFormatError(f"{path}: regression data must be a single sequence")
        inputs = np.array([x for _, x, _ in only])
        targets = np.array([y for _, _, y in only])
        T = len(only)
        n_train = schema.n_train if schema.n_train is not None else int(round(T * schema.train_fraction))
        return TimeSeriesDataset(REGRESSION, inputs, targets, n_train, T - n_train, name=schema.name)

    lengths = {len(v) for v in seqs.values()}
    if len(lengths) != 1:
        first_bad = min(
            (v[0][0] for v in seqs.values() if len(v) != len(next(iter(seqs.values())))),
            default=0,
        )
        raise DatasetFormatError(
            f"{path}:{first_bad}: inconsistent sequence lengths {sorted(lengths)}"
        )
    inputs, labels = [], []
    for sid in sorted(seqs):
        seq = seqs[sid]
        lab = {y[0] for _, _, y in seq}
        if len(lab) != 1:
            raise DatasetFormatError(f"{path}:{seq[0][0]}: sequence {sid} has several labels")
        (lv,) = lab
        if lv != int(lv):
            raise DatasetFormatError(f"{path}:{seq[0][0]}: non-integer label {lv}")
        inputs.append([x for _, x, _ in seq])
        labels.append(int(lv))
    labels = np.array(labels, dtype=np.int64)
    n_seq = len(labels)
    n_classes = schema.n_classes or int(labels.max()) + 1
    n_train = schema.n_train if schema.n_train is not None else int(round(n_seq * schema.train_fraction))
    return TimeSeriesDataset(
        CLASSIFICATION, np.array(inputs), labels, n_train, n_seq - n_train,
        name=schema.name, n_classes=n_classes,
    )


# -- normalization --------------------------------------------------------


def _channel_stats(x):
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    flagged = tuple(int(k) for k in np.flatnonzero(std == 0))
    scale = np.where(std == 0, 1.0, std)
    return mean, scale, flagged


def normalize(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Z-score every channel using training-split statistics only.

    Zero-variance channels are centred but not divided, and listed in the
    record's ``flagged_*`` fields.
    """
    if ds.n_train < 1:
        raise EmptyDatasetError("cannot normalize without training data")
    in_mean, in_scale, in_flag = _channel_stats(ds.train_inputs)
    inputs = (ds.inputs - in_mean) / in_scale
    tm = ts = None
    t_flag = ()
    targets = ds.targets
    if ds.task == REGRESSION:
        tm, ts, t_flag = _channel_stats(ds.train_targets)
        targets = (ds.targets - tm) / ts
    record = Normalization(in_mean, in_scale, tm, ts, in_flag, t_flag)
    return replace(ds, inputs=inputs, targets=targets, normalization=record)


def denormalize(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    rec = ds.normalization
    if rec is None:
        return ds
    inputs = ds.inputs * rec.input_scale + rec.input_mean
    targets = ds.targets
    if rec.target_mean is not None:
        targets = ds.targets * rec.target_scale + rec.target_mean
    return replace(ds, inputs=inputs, targets=targets, normalization=None)


def input_range(ds: TimeSeriesDataset) -> float:
    """Largest absolute training input value; sizes the quantized input port."""
    m = float(np.max(np.abs(ds.train_inputs))) if ds.n_train else 0.0
    return m if m > 0 and math.isfinite(m) else 1.0
