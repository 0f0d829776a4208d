"""Pipeline stages over an artifact directory.

Each stage reads the artifacts of earlier stages from ``out/<stage>/`` and
writes its own; running the stages in order is exactly what ``run`` does.
A grid cell that fails writes an error record in place of its artifact, and
downstream stages propagate it.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path


from . import data as data_mod
from .baselines import pruner_report
from .config import ExperimentConfig
from .data import CsvSchema, TimeSeriesDataset, input_range, load_csv, normalize
from .dse import AcceleratorConfig, DseResult, report_rows, rows_to_text
from .errors import ConfigError, MissingArtifactError, RcError
from .quant import QuantizedModel, calibration_slice, evaluate_quantized, quantize_model
from .reservoir import Hyperparams, Performance, ReservoirModel, SearchResult, SearchSpace, fit, init_reservoir, random_search
from .rtl import emit_verilog, estimate_cost, lower
from .sensitivity import SensitivityReport, prune

log = logging.getLogger(__name__)

STAGES = ("gen-data", "tune", "train", "quantize", "sensitivity", "prune", "dse", "emit-rtl", "report")


def p_tag(p) -> str:
    p = float(p)
    return f"{int(p)}" if p.is_integer() else repr(p).replace(".", "_")


class Artifacts:
    """Paths of every artifact, following ``out/<stage>/<name>.<ext>``."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = cfg.output
        self.name = cfg.name

    def path(self, stage, stem, ext="json") -> Path:
        return self.root / stage / f"{stem}.{ext}"

    def data(self):
        return self.path("data", self.name)

    def tune(self):
        return self.path("tune", self.name)

    def model(self):
        return self.path("train", self.name)

    def quantized(self, q):
        return self.path("quantize", f"{self.name}_q{q}")

    def ranking(self, q, pruner):
        return self.path("sensitivity", f"{self.name}_q{q}_{pruner}")

    def pruned(self, q, p, pruner):
        return self.path("prune", f"{self.name}_q{q}_p{p_tag(p)}_{pruner}")

    def dse(self):
        return self.path("dse", self.name)

    def verilog(self, q, p, pruner):
        return self.path("rtl", f"{self.name}_q{q}_p{p_tag(p)}_{pruner}", "v")

    def cost(self, q, p, pruner):
        return self.path("rtl", f"{self.name}_q{q}_p{p_tag(p)}_{pruner}_cost")

    def report(self, fmt):
        return self.path("report", self.name, fmt)

    def figure(self, kind):
        return self.path("report", f"{self.name}_{kind}", "png")


def write_json(path: Path, doc: dict, stage: str, seed: int):
    doc = dict(doc)
    doc.setdefault("schema_version", 1)
    doc["generated_by"] = {"stage": stage, "seed": seed}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_json(path: Path, stage: str) -> dict:
    if not path.exists():
        raise MissingArtifactError(f"missing {stage} artifact: {path}")
    return json.loads(path.read_text())


def error_doc(stage, exc) -> dict:
    return {"schema_version": 1, "kind": "error", "stage": stage, "error": f"{type(exc).__name__}: {exc}"}


def is_error(doc) -> bool:
    return doc.get("kind") == "error"


def _grid(cfg):
    g = cfg.grid
    return sorted(int(q) for q in g["q"]), sorted(float(p) for p in g["p"]), sorted(g["pruners"])


# -- stages ------------------------------------------------------------------


def stage_gen_data(cfg: ExperimentConfig, jobs=1):
    a = Artifacts(cfg)
    d = cfg["dataset"]
    gen = d["generator"]
    if gen == "henon":
        ds = data_mod.gen_henon(**d["params"])
    elif gen == "synthetic":
        params = {"n_classes": 2, "seq_len": 50, "n_train": 200, "n_test": 50, "seed": cfg.seed}
        params.update(d["params"])
        ds = data_mod.gen_synthetic_classification(**params)
    else:
        c = dict(d["csv"])
        path = c.pop("path")
        ds = load_csv(path, CsvSchema(**{k: v for k, v in c.items() if v is not None}))
    if d["normalize"]:
        ds = normalize(ds)
    doc = ds.to_dict()
    write_json(a.data(), doc, "gen-data", cfg.seed)
    return ds


def load_dataset(cfg) -> TimeSeriesDataset:
    return TimeSeriesDataset.from_dict(read_json(Artifacts(cfg).data(), "gen-data"))


def _hyperparams(cfg) -> Hyperparams:
    m = cfg["model"]
    return Hyperparams(
        sr=float(m["sr"]), lr=float(m["lr"]), ncrl=int(m["ncrl"]), ridge=float(m["ridge"]),
        input_scaling=float(m["input_scaling"]), bias_scaling=float(m["bias_scaling"]),
        activation=m["activation"],
    )


def stage_tune(cfg: ExperimentConfig, jobs=1):
    s = cfg["search"]
    if s is None:
        raise ConfigError("search", "a search section is required for tune")
    ds = load_dataset(cfg)
    space = SearchSpace(
        sr=tuple(s["sr"]), lr=tuple(s["lr"]), ridge=tuple(s["ridge"]),
        ncrl=None if s["ncrl"] is None else tuple(int(v) for v in s["ncrl"]),
    )
    res = random_search(space, int(s["n_trials"]), ds, seed=cfg.seed, n=int(cfg["model"]["n"]),
                        base=_hyperparams(cfg), jobs=jobs, val_fraction=float(s["val_fraction"]))
    write_json(Artifacts(cfg).tune(), res.to_dict(), "tune", cfg.seed)
    return res


def stage_train(cfg: ExperimentConfig, jobs=1):
    a = Artifacts(cfg)
    ds = load_dataset(cfg)
    hp = _hyperparams(cfg)
    if cfg["search"] is not None:
        hp = SearchResult.from_dict(read_json(a.tune(), "tune")).best
    m = fit(init_reservoir(hp, int(cfg["model"]["n"]), ds.d_in, cfg.seed), ds)
    write_json(a.model(), m.to_dict(), "train", cfg.seed)
    return m


def load_model(cfg) -> ReservoirModel:
    return ReservoirModel.from_dict(read_json(Artifacts(cfg).model(), "train"))


def stage_quantize(cfg: ExperimentConfig, jobs=1, qs=None):
    a = Artifacts(cfg)
    ds = load_dataset(cfg)
    m = load_model(cfg)
    r = input_range(ds)
    out = {}
    for q in qs or _grid(cfg)[0]:
        try:
            qm = quantize_model(m, q, r)
            doc = qm.to_dict()
            doc["base_perf"] = evaluate_quantized(qm, ds).to_dict()
            out[q] = qm
        except RcError as e:
            doc = error_doc("quantize", e)
        write_json(a.quantized(q), doc, "quantize", cfg.seed)
    return out


def load_quantized(cfg, q):
    doc = read_json(Artifacts(cfg).quantized(q), "quantize")
    if is_error(doc):
        return None, doc["error"], None
    return QuantizedModel.from_dict(doc), None, Performance.from_dict(doc["base_perf"])


def stage_sensitivity(cfg: ExperimentConfig, jobs=1):
    a = Artifacts(cfg)
    ds = load_dataset(cfg)
    Q, _, pruners = _grid(cfg)
    for q in Q:
        qm, err, _ = load_quantized(cfg, q)
        calib = None
        for kind in pruners:
            if qm is None:
                doc = {"schema_version": 1, "kind": "error", "stage": "quantize", "error": err}
            else:
                try:
                    calib = calib or calibration_slice(qm, ds)
                    doc = pruner_report(kind, qm, calib, seed=cfg.seed, jobs=jobs).to_dict()
                except RcError as e:
                    doc = error_doc("sensitivity", e)
            write_json(a.ranking(q, kind), doc, "sensitivity", cfg.seed)


def stage_prune(cfg: ExperimentConfig, jobs=1):
    a = Artifacts(cfg)
    Q, P, pruners = _grid(cfg)
    for q in Q:
        qm, _, _ = load_quantized(cfg, q)
        for kind in pruners:
            rdoc = read_json(a.ranking(q, kind), "sensitivity")
            for p in P:
                if is_error(rdoc):
                    doc = dict(rdoc)
                else:
                    try:
                        doc = prune(qm, SensitivityReport.from_dict(rdoc), p).to_dict()
                    except RcError as e:
                        doc = error_doc("prune", e)
                write_json(a.pruned(q, p, kind), doc, "prune", cfg.seed)


def _evaluate_cell(args):
    doc, ds = args
    return evaluate_quantized(QuantizedModel.from_dict(doc), ds)


def stage_dse(cfg: ExperimentConfig, jobs=1, progress=None):
    a = Artifacts(cfg)
    ds = load_dataset(cfg)
    Q, P, pruners = _grid(cfg)
    cells = []
    todo = []
    for q in Q:
        _, _, base = load_quantized(cfg, q)
        for p in P:
            for kind in pruners:
                doc = read_json(a.pruned(q, p, kind), "prune")
                if is_error(doc):
                    cells.append(AcceleratorConfig(q, p, kind, base_perf=base,
                                                   error=f"{doc['stage']}: {doc['error']}"))
                    continue
                pm = QuantizedModel.from_dict(doc)
                cell = AcceleratorConfig(q, p, kind, None, base, pm.pruned, len(pm.positions))
                cells.append(cell)
                todo.append((cell, doc))
    args = [(doc, ds) for _, doc in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            perfs = list(ex.map(_evaluate_cell, args))
    else:
        perfs = [_evaluate_cell(x) for x in args]
    for (cell, _), perf in zip(todo, perfs):
        cell.perf = perf
    cells.sort(key=lambda c: c.key)
    if progress is not None:
        for c in cells:
            progress(c)
    m = load_model(cfg)
    result = DseResult(cells, tuple(Q), tuple(P), tuple(pruners), ds.name,
                       seeds={"model": m.seed, "pruner": cfg.seed})
    write_json(a.dse(), result.to_dict(), "dse", cfg.seed)
    return result


def load_dse(cfg) -> DseResult:
    return DseResult.from_dict(read_json(Artifacts(cfg).dse(), "dse"))


def _lower_cell(args):
    doc, module_name = args
    net = lower(QuantizedModel.from_dict(doc))
    return emit_verilog(net, module_name), estimate_cost(net).to_dict()


def stage_emit_rtl(cfg: ExperimentConfig, jobs=1):
    a = Artifacts(cfg)
    result = load_dse(cfg)
    module = cfg["rtl"]["module_name"]
    todo = []
    for c in result.configs:
        if not c.ok:
            continue
        todo.append((c, read_json(a.pruned(c.q, c.p, c.pruner), "prune")))
    args = [(doc, module) for _, doc in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_safe_lower, args))
    else:
        outs = [_safe_lower(x) for x in args]
    for (c, _), out in zip(todo, outs):
        if isinstance(out, dict):
            write_json(a.cost(c.q, c.p, c.pruner), out, "emit-rtl", cfg.seed)
            continue
        text, cost = out
        path = a.verilog(c.q, c.p, c.pruner)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        write_json(a.cost(c.q, c.p, c.pruner), {"kind": "cost_estimate", **cost}, "emit-rtl", cfg.seed)


def _safe_lower(args):
    try:
        return _lower_cell(args)
    except RcError as e:
        return error_doc("emit-rtl", e)


def stage_report(cfg: ExperimentConfig, jobs=1, formats=None, figures=None):
    """Report files (and figures) from the DSE result plus any cost estimates."""
    a = Artifacts(cfg)
    result = load_dse(cfg)
    for c in result.configs:
        path = a.cost(c.q, c.p, c.pruner)
        if c.ok and path.exists():
            doc = json.loads(path.read_text())
            if is_error(doc):
                c.error = f"{doc['stage']}: {doc['error']}"
            else:
                c.cost = {k: doc[k] for k in ("n_adders", "n_comparators", "n_registers", "n_shift_terms",
                                              "est_luts", "critical_path_levels")}
    rows = report_rows(result)
    written = []
    for fmt in formats or cfg["report"]["formats"]:
        path = a.report(fmt)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rows_to_text(rows, fmt))
        written.append(path)
    if (cfg["report"]["figures"] if figures is None else figures) and rows:
        from .plotting import plot_perf_vs_cost, plot_perf_vs_rate

        written.append(plot_perf_vs_rate(rows, a.figure("perf_vs_rate")))
        if any(r["est_luts"] is not None for r in rows):
            written.append(plot_perf_vs_cost(rows, a.figure("perf_vs_cost")))
    return result, rows, written


STAGE_FUNCS = {
    "gen-data": stage_gen_data,
    "tune": stage_tune,
    "train": stage_train,
    "quantize": stage_quantize,
    "sensitivity": stage_sensitivity,
    "prune": stage_prune,
    "dse": stage_dse,
    "emit-rtl": stage_emit_rtl,
    "report": stage_report,
}


def run_all(cfg: ExperimentConfig, jobs=1, progress=None):
    """Every stage in order; returns the final result with costs attached."""
    stage_gen_data(cfg, jobs)
    if cfg["search"] is not None:
        stage_tune(cfg, jobs)
    stage_train(cfg, jobs)
    stage_quantize(cfg, jobs)
    stage_sensitivity(cfg, jobs)
    stage_prune(cfg, jobs)
    stage_dse(cfg, jobs, progress=progress)
    if cfg["rtl"]["emit"]:
        stage_emit_rtl(cfg, jobs)
    result, rows, _ = stage_report(cfg, jobs)
    return result, rows
