from pathlib import Path

import pytest
import yaml

from rcprune.config import DEFAULTS, load_config, validate
from rcprune.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_validate():
    cfg = validate({})
    assert cfg.grid["q"] == [4, 6, 8]
    assert cfg["model"]["n"] == 50


def test_bad_bit_width_names_path():
    with pytest.raises(ConfigError) as exc:
        validate({"grid": {"q": [4, 9]}})
    assert exc.value.path == "grid.q[1]"


def test_bad_rate_names_path():
    with pytest.raises(ConfigError) as exc:
        validate({"grid": {"p": [150]}})
    assert exc.value.path == "grid.p[0]"


def test_unknown_field():
    with pytest.raises(ConfigError) as exc:
        validate({"model": {"neurons": 10}})
    assert exc.value.path == "model.neurons"


def test_unknown_pruner():
    with pytest.raises(ConfigError, match="grid.pruners\\[0\\]"):
        validate({"grid": {"pruners": ["magnitude"]}})


def test_duplicate_grid_entries():
    with pytest.raises(ConfigError, match="grid.q"):
        validate({"grid": {"q": [4, 4]}})


@pytest.mark.parametrize("name", ["1abc", "module", "clk", "has space"])
def test_module_name_rejected(name):
    with pytest.raises(ConfigError) as exc:
        validate({"rtl": {"module_name": name}})
    assert exc.value.path == "rtl.module_name"


def test_ncrl_bounded_by_n_squared():
    with pytest.raises(ConfigError, match="model.ncrl"):
        validate({"model": {"n": 3, "ncrl": 10}})


def test_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        validate({"schema_version": 2})


def test_csv_path_relative_to_config(tmp_path):
    (tmp_path / "d.csv").write_text("u0,y0\n0,1\n1,2\n2,3\n")
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"dataset": {"generator": "csv", "csv": {"path": "d.csv"}}}))
    cfg = load_config(p)
    assert cfg["dataset"]["csv"]["path"] == str(tmp_path / "d.csv")


def test_csv_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="dataset.csv.path"):
        validate({"dataset": {"generator": "csv", "csv": {"path": str(tmp_path / "no.csv")}}})


def test_load_shipped_configs():
    for p in sorted(CONFIGS.glob("*.yaml")):
        load_config(p)


def test_missing_and_invalid_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)


def test_dump_round_trip():
    cfg = validate({"seed": 3, "grid": {"q": [2]}})
    assert validate(yaml.safe_load(cfg.dump())).raw == cfg.raw


def test_overrides_revalidate():
    cfg = validate({}).with_overrides(seed=5, output="elsewhere", formats=["json"])
    assert cfg.seed == 5 and str(cfg.output) == "elsewhere"
    assert cfg["report"]["formats"] == ["json"]
    with pytest.raises(ConfigError):
        validate({}).with_overrides(seed=-1)


def test_defaults_not_mutated():
    validate({"grid": {"q": [2]}})
    assert DEFAULTS["grid"]["q"] == [4, 6, 8]
