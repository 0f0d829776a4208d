"""Exhaustive exploration of the quantization x pruning grid."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import pruner_report
from .data import TimeSeriesDataset, input_range
from .errors import RcError, SearchSpaceError
from .quant import QuantizedModel, calibration_slice, evaluate_quantized, quantize_model
from .reservoir import Performance, ReservoirModel
from .sensitivity import PRUNER_KINDS, prune

SCHEMA_VERSION = 1
FORMATS = ("csv", "json")
COST_FIELDS = ("est_luts", "n_adders", "n_comparators", "n_registers", "n_shift_terms", "critical_path_levels")
REPORT_FIELDS = (
    "q", "p", "pruner", "metric", "perf", "base_perf", "n_weights", "n_pruned", *COST_FIELDS, "error",
)


@dataclass
class AcceleratorConfig:
    q: int
    p: float
    pruner: str
    perf: Optional[Performance] = None
    base_perf: Optional[Performance] = None
    pruned: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    n_weights: int = 0
    cost: Optional[dict] = None
    error: Optional[str] = None
    model: Optional[QuantizedModel] = field(default=None, repr=False, compare=False)

    @property
    def key(self):
        return (self.q, self.p, self.pruner)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self):
        return {
            "q": self.q,
            "p": self.p,
            "pruner": self.pruner,
            "perf": None if self.perf is None else self.perf.to_dict(),
            "base_perf": None if self.base_perf is None else self.base_perf.to_dict(),
            "n_weights": self.n_weights,
            "pruned": self.pruned.tolist(),
            "cost": self.cost,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            q=int(d["q"]),
            p=float(d["p"]),
            pruner=d["pruner"],
            perf=None if d["perf"] is None else Performance.from_dict(d["perf"]),
            base_perf=None if d["base_perf"] is None else Performance.from_dict(d["base_perf"]),
            pruned=np.asarray(d["pruned"], dtype=np.int64).reshape(-1, 2),
            n_weights=int(d["n_weights"]),
            cost=d.get("cost"),
            error=d.get("error"),
        )


@dataclass
class DseResult:
    configs: list
    q_grid: tuple
    p_grid: tuple
    pruners: tuple
    dataset: str
    seeds: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict, repr=False, compare=False)  # (q, pruner) -> report
    timing: dict = field(default_factory=dict, compare=False)

    @property
    def failed(self):
        return [c for c in self.configs if not c.ok]

    def get(self, q, p, pruner="sensitivity") -> AcceleratorConfig:
        for c in self.configs:
            if c.key == (q, float(p), pruner):
                return c
        raise KeyError((q, p, pruner))

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "dse_result",
            "dataset": self.dataset,
            "grid": {"q": list(self.q_grid), "p": list(self.p_grid), "pruners": list(self.pruners)},
            "seeds": self.seeds,
            "flags": self.flags,
            "configs": [c.to_dict() for c in self.configs],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported DSE schema {d.get('schema_version')!r}")
        g = d["grid"]
        return cls(
            configs=[AcceleratorConfig.from_dict(c) for c in d["configs"]],
            q_grid=tuple(g["q"]),
            p_grid=tuple(float(p) for p in g["p"]),
            pruners=tuple(g["pruners"]),
            dataset=d["dataset"],
            seeds=d.get("seeds", {}),
            flags=d.get("flags", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def validate_grid(Q, P, pruners):
    if not Q or any(not isinstance(q, (int, np.integer)) or not 1 <= q <= 8 for q in Q):
        raise SearchSpaceError(f"Q must be nonempty integers in [1, 8], got {list(Q)}")
    if not P or any(not 0 <= p <= 100 for p in P):
        raise SearchSpaceError(f"P must be nonempty values in [0, 100], got {list(P)}")
    unknown = [k for k in pruners if k not in PRUNER_KINDS]
    if not pruners or unknown:
        raise SearchSpaceError(f"unknown pruners {unknown}; choose from {PRUNER_KINDS}")


def _explore_q(model: ReservoirModel, ds: TimeSeriesDataset, q, P, pruners, seed, in_range, jobs=1):
    """All grid cells for one bit-width: quantize, rank once per pruner, prune per rate."""
    cells = []
    reports = {}
    try:
        qm = quantize_model(model, q, in_range)
        base = evaluate_quantized(qm, ds)
        calib = calibration_slice(qm, ds)
    except RcError as e:
        err = f"quantize: {type(e).__name__}: {e}"
        return [AcceleratorConfig(q, float(p), k, error=err) for k in pruners for p in P], {}
    for kind in pruners:
        try:
            rep = pruner_report(kind, qm, calib, seed=seed, jobs=jobs)
        except RcError as e:
            err = f"rank: {type(e).__name__}: {e}"
            cells += [AcceleratorConfig(q, float(p), kind, base_perf=base, error=err) for p in P]
            continue
        reports[(q, kind)] = rep
        for p in P:
            try:
                pm = prune(qm, rep, p)
                perf = evaluate_quantized(pm, ds)
                cells.append(AcceleratorConfig(
                    q, float(p), kind, perf, base, pm.pruned, len(pm.positions), model=pm,
                ))
            except RcError as e:
                cells.append(AcceleratorConfig(q, float(p), kind, base_perf=base,
                                               error=f"prune: {type(e).__name__}: {e}"))
    return cells, reports


def _explore_q_job(args):
    return _explore_q(*args)


def explore(
    model: ReservoirModel,
    ds: TimeSeriesDataset,
    Q: Sequence[int] = (4, 6, 8),
    P: Sequence[float] = (15, 30, 45, 60, 75, 90),
    pruners: Sequence[str] = ("sensitivity",),
    seed: int = 0,
    jobs: int = 1,
    in_range: Optional[float] = None,
    progress=None,
) -> DseResult:
    """Run every (q, p, pruner) cell; failed cells carry an error record.

    Rankings are computed once per (q, pruner) and reused across rates, so
    masks are nested. Cells are ordered by (q, p, pruner).
    """
    validate_grid(Q, P, pruners)
    Q = sorted(set(int(q) for q in Q))
    P = sorted(set(float(p) for p in P))
    pruners = tuple(sorted(set(pruners)))
    r = input_range(ds) if in_range is None else in_range
    args = [(model, ds, q, P, pruners, seed, r, 1 if jobs > 1 and len(Q) > 1 else jobs) for q in Q]
    if jobs > 1 and len(Q) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(Q))) as ex:
            parts = list(ex.map(_explore_q_job, args))
    else:
        parts = [_explore_q(*a) for a in args]
    configs = []
    reports = {}
    for cells, reps in parts:
        configs += cells
        reports.update(reps)
    configs.sort(key=lambda c: c.key)
    if progress is not None:
        for c in configs:
            progress(c)
    return DseResult(
        configs=configs,
        q_grid=tuple(Q),
        p_grid=tuple(P),
        pruners=pruners,
        dataset=ds.name,
        seeds={"model": model.seed, "pruner": seed},
        reports=reports,
    )


def progress_line(c: AcceleratorConfig) -> str:
    perf = "error" if c.perf is None else repr(c.perf.value)
    return f"q={c.q} p={_fmt_p(c.p)} pruner={c.pruner} perf={perf}"


def attach_costs(result: DseResult, cost_fn) -> DseResult:
    """Fill each config's cost with ``cost_fn(config)`` (a dict or CostEstimate)."""
    for c in result.configs:
        if c.ok and c.model is not None:
            try:
                est = cost_fn(c)
                c.cost = est.to_dict() if hasattr(est, "to_dict") else dict(est)
            except RcError as e:
                c.error = f"lower: {type(e).__name__}: {e}"
    return result


# -- reports ---------------------------------------------------------------------


def _fmt_p(p):
    return str(int(p)) if float(p).is_integer() else repr(float(p))


def report_rows(result: DseResult):
    rows = []
    for c in sorted(result.configs, key=lambda c: c.key):
        row = {
            "q": c.q,
            "p": float(c.p),
            "pruner": c.pruner,
            "metric": None if c.perf is None and c.base_perf is None else (c.perf or c.base_perf).kind,
            "perf": None if c.perf is None else c.perf.value,
            "base_perf": None if c.base_perf is None else c.base_perf.value,
            "n_weights": c.n_weights if c.ok else None,
            "n_pruned": len(c.pruned) if c.ok else None,
            "error": c.error,
        }
        for k in COST_FIELDS:
            row[k] = None if c.cost is None else c.cost.get(k)
        rows.append({k: row[k] for k in REPORT_FIELDS})
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_text(rows, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, "kind": "dse_report", "rows": rows},
                          indent=1, sort_keys=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([_cell(r[k]) for k in REPORT_FIELDS])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}; supported: {', '.join(FORMATS)}")


def report(result: DseResult, fmt: str = "csv") -> str:
    """Perf-vs-p table (one row per config, sorted by q, p, pruner) with cost columns."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; supported: {', '.join(FORMATS)}")
    return rows_to_text(report_rows(result), fmt)


_INT_FIELDS = {"q", "n_weights", "n_pruned", *COST_FIELDS}
_FLOAT_FIELDS = {"p", "perf", "base_perf"}


def parse_report(text: str, fmt: str):
    """Rows back from a rendered report."""
    if fmt == "json":
        return json.loads(text)["rows"]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}; supported: {', '.join(FORMATS)}")
    rows = []
    reader = csv.DictReader(io.StringIO(text))
    for raw in reader:
        row = {}
        for k in REPORT_FIELDS:
            v = raw[k]
            if v == "":
                row[k] = None
            elif k in _INT_FIELDS:
                row[k] = int(v)
            elif k in _FLOAT_FIELDS:
                row[k] = float(v)
            else:
                row[k] = v
        rows.append(row)
    return rows


# -- filtering -------------------------------------------------------------------


def filter_configs(
    result: DseResult,
    perf_floor: Optional[float] = None,
    rmse_ceiling: Optional[float] = None,
    cost_ceiling: Optional[float] = None,
) -> DseResult:
    """Configs meeting every supplied bound.

    ``perf_floor`` bounds accuracy from below, ``rmse_ceiling`` bounds rmse
    from above, ``cost_ceiling`` bounds est_luts from above. A bound on a
    metric a config does not report excludes that config.
    """
    if perf_floor is None and rmse_ceiling is None and cost_ceiling is None:
        raise ValueError("supply at least one bound")

    def keep(c: AcceleratorConfig):
        if not c.ok or c.perf is None:
            return False
        if perf_floor is not None and not (c.perf.kind == "accuracy" and c.perf.value >= perf_floor):
            return False
        if rmse_ceiling is not None and not (c.perf.kind == "rmse" and c.perf.value <= rmse_ceiling):
            return False
        if cost_ceiling is not None and not (c.cost is not None and c.cost["est_luts"] <= cost_ceiling):
            return False
        return True

    kept = [c for c in result.configs if keep(c)]
    flags = dict(result.flags)
    flags["filter"] = {"perf_floor": perf_floor, "rmse_ceiling": rmse_ceiling, "cost_ceiling": cost_ceiling}
    if not kept:
        flags["empty"] = True
    return replace(result, configs=kept, flags=flags)
