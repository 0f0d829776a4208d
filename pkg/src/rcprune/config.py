"""Experiment configuration: one YAML file, validated with field-path diagnostics.

Schema (version 1)::

    schema_version: 1
    name: henon                 # artifact base name
    seed: 0                     # model seed; also seeds the random pruner
    output: out
    dataset:
      generator: henon          # henon | synthetic | csv
      params: {}                # generator keyword arguments
      csv: {path: data.csv, task: regression, n_train: null, train_fraction: 0.8, n_classes: 0}
      normalize: true
    model:
      n: 50
      sr: 0.9
      lr: 1.0
      ncrl: 250
      ridge: 1.0e-8
      input_scaling: 2.0
      bias_scaling: 3.0
      activation: hardtanh
    search: null                # or {n_trials, sr: [lo, hi], lr, ncrl, ridge, val_fraction}
    grid:
      q: [4, 6, 8]
      p: [15, 30, 45, 60, 75, 90]
      pruners: [sensitivity]
    rtl: {emit: true, module_name: rc_accel}
    report: {formats: [csv, json], figures: true}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .reservoir import ACTIVATIONS
from .rtl.verilog import IDENT, KEYWORDS, RESERVED_PORTS
from .sensitivity import PRUNER_KINDS

SCHEMA_VERSION = 1
GENERATORS = ("henon", "synthetic", "csv")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "name": "henon",
    "seed": 0,
    "output": "out",
    "dataset": {"generator": "henon", "params": {}, "csv": None, "normalize": True},
    "model": {
        "n": 50, "sr": 0.9, "lr": 1.0, "ncrl": 250, "ridge": 1e-8,
        "input_scaling": 2.0, "bias_scaling": 3.0, "activation": "hardtanh",
    },
    "search": None,
    "grid": {"q": [4, 6, 8], "p": [15, 30, 45, 60, 75, 90], "pruners": ["sensitivity"]},
    "rtl": {"emit": True, "module_name": "rc_accel"},
    "report": {"formats": ["csv", "json"], "figures": True},
}

SEARCH_DEFAULTS = {
    "n_trials": 20, "sr": [0.1, 1.5], "lr": [1.0, 1.0], "ncrl": None,
    "ridge": [1e-12, 1e-2], "val_fraction": 0.2,
}


@dataclass
class ExperimentConfig:
    raw: dict
    source: Optional[Path] = None

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def output(self) -> Path:
        return Path(self.raw["output"])

    @property
    def grid(self) -> dict:
        return self.raw["grid"]

    def with_overrides(self, seed=None, output=None, formats=None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = seed
        if output is not None:
            raw["output"] = str(output)
        if formats is not None:
            raw["report"]["formats"] = list(formats)
        return validate(raw, self.source)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def _merge(defaults, given, path):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        p = f"{path}.{k}" if path else k
        if k not in defaults:
            raise ConfigError(p, "unknown field")
        if isinstance(defaults[k], dict) and k not in ("params",):
            out[k] = _merge(defaults[k], v, p)
        else:
            out[k] = v
    return out


def _num(v, path, lo=None, hi=None, integer=False, lo_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(path, f"{v!r} below {'or equal to ' if lo_open else ''}{lo}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"{v!r} above {hi}")
    return int(v) if integer else v


def _list(v, path, nonempty=True):
    if not isinstance(v, list) or (nonempty and not v):
        raise ConfigError(path, "expected a nonempty list")
    return v


def _range(v, path):
    _list(v, path)
    if len(v) != 2:
        raise ConfigError(path, "expected [lo, hi]")
    lo, hi = _num(v[0], f"{path}[0]"), _num(v[1], f"{path}[1]")
    if lo > hi:
        raise ConfigError(path, f"empty range [{lo}, {hi}]")
    return [lo, hi]


def validate(raw, source=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {raw.get('schema_version')!r}")
    cfg = _merge({k: v for k, v in DEFAULTS.items() if k != "search"} | {"search": None}, raw, "")
    if raw.get("search") is not None:
        cfg["search"] = _merge(SEARCH_DEFAULTS, raw["search"], "search")
    base = source.parent if source is not None else Path(".")

    if not isinstance(cfg["name"], str) or not cfg["name"].replace("_", "").replace("-", "").isalnum():
        raise ConfigError("name", "expected an identifier-like string")
    _num(cfg["seed"], "seed", lo=0, integer=True)
    if not isinstance(cfg["output"], str):
        raise ConfigError("output", "expected a path string")

    d = cfg["dataset"]
    if d["generator"] not in GENERATORS:
        raise ConfigError("dataset.generator", f"expected one of {GENERATORS}")
    if not isinstance(d["params"], dict):
        raise ConfigError("dataset.params", "expected a mapping")
    if d["generator"] == "csv":
        c = d["csv"]
        if not isinstance(c, dict) or "path" not in c:
            raise ConfigError("dataset.csv.path", "required for the csv generator")
        path = Path(c["path"])
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError("dataset.csv.path", f"file not found: {path}")
        c["path"] = str(path)
    if not isinstance(d["normalize"], bool):
        raise ConfigError("dataset.normalize", "expected true or false")

    m = cfg["model"]
    _num(m["n"], "model.n", lo=1, integer=True)
    _num(m["sr"], "model.sr", lo=0, lo_open=True)
    _num(m["lr"], "model.lr", lo=0, hi=1, lo_open=True)
    _num(m["ncrl"], "model.ncrl", lo=1, hi=m["n"] * m["n"], integer=True)
    _num(m["ridge"], "model.ridge", lo=0)
    _num(m["input_scaling"], "model.input_scaling", lo=0, lo_open=True)
    _num(m["bias_scaling"], "model.bias_scaling", lo=0)
    if m["activation"] not in ACTIVATIONS:
        raise ConfigError("model.activation", f"expected one of {ACTIVATIONS}")

    s = cfg["search"]
    if s is not None:
        _num(s["n_trials"], "search.n_trials", lo=1, integer=True)
        for k in ("sr", "lr", "ridge"):
            _range(s[k], f"search.{k}")
        if s["ncrl"] is not None:
            _range(s["ncrl"], "search.ncrl")
        _num(s["val_fraction"], "search.val_fraction", lo=0, hi=1, lo_open=True)

    g = cfg["grid"]
    for i, q in enumerate(_list(g["q"], "grid.q")):
        _num(q, f"grid.q[{i}]", lo=1, hi=8, integer=True)
    for i, p in enumerate(_list(g["p"], "grid.p")):
        _num(p, f"grid.p[{i}]", lo=0, hi=100)
    for i, k in enumerate(_list(g["pruners"], "grid.pruners")):
        if k not in PRUNER_KINDS:
            raise ConfigError(f"grid.pruners[{i}]", f"unknown pruner {k!r}; expected one of {PRUNER_KINDS}")
    for key in ("q", "p", "pruners"):
        if len(set(g[key])) != len(g[key]):
            raise ConfigError(f"grid.{key}", "duplicate entries")

    if not isinstance(cfg["rtl"]["emit"], bool):
        raise ConfigError("rtl.emit", "expected true or false")
    mod = cfg["rtl"]["module_name"]
    if not isinstance(mod, str) or not IDENT.match(mod) or mod in KEYWORDS or mod in RESERVED_PORTS:
        raise ConfigError("rtl.module_name", f"invalid Verilog module name {mod!r}")
    for i, f in enumerate(_list(cfg["report"]["formats"], "report.formats")):
        if f not in ("csv", "json"):
            raise ConfigError(f"report.formats[{i}]", f"unknown format {f!r}")
    return ExperimentConfig(cfg, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("<file>", f"config not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"invalid YAML: {e}") from None
    return validate(raw or {}, path)
