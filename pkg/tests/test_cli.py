import json
from pathlib import Path

import pytest

from rcprune.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, main
from rcprune.dse import REPORT_FIELDS, DseResult
from rcprune.rtl.verilog import check_verilog

SMOKE = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.yaml")


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    code = main(["run", "--config", SMOKE, "--out", str(out), "--jobs", "1"])
    return code, out


def test_run_writes_every_artifact(smoke_run):
    code, out = smoke_run
    assert code == EXIT_OK
    assert (out / "data" / "smoke.json").exists()
    assert (out / "train" / "smoke.json").exists()
    assert (out / "dse" / "smoke.json").exists()
    vs = sorted((out / "rtl").glob("*.v"))
    assert len(vs) == 2 * 2 * 2
    for v in vs:
        assert check_verilog(v.read_text()) == "rc_accel"
    rows = (out / "report" / "smoke.csv").read_text().splitlines()
    assert rows[0] == ",".join(REPORT_FIELDS)
    assert len(rows) == 1 + 8
    assert json.loads((out / "report" / "smoke.json").read_text())["rows"]
    assert (out / "report" / "smoke_perf_vs_rate.png").read_bytes()[:4] == b"\x89PNG"
    assert (out / "report" / "smoke_perf_vs_cost.png").exists()


def test_manual_chain_equals_run(smoke_run, tmp_path):
    _, ref = smoke_run
    out = tmp_path / "out"
    for stage in ("gen-data", "train", "quantize", "sensitivity", "prune", "dse", "emit-rtl", "report"):
        assert main([stage, "--config", SMOKE, "--out", str(out), "--jobs", "1"]) == EXIT_OK, stage
    assert _files(out) == _files(ref)


def test_missing_artifact(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["gen-data", "--config", SMOKE, "--out", out]) == EXIT_OK
    assert main(["quantize", "--config", SMOKE, "--out", out]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert "missing train artifact" in err
    assert str(tmp_path / "o" / "train" / "smoke.json") in err


def test_empty_result_report(tmp_path, capsys):
    out = tmp_path / "o"
    (out / "dse").mkdir(parents=True)
    DseResult([], (4,), (15.0,), ("sensitivity",), "henon").save(out / "dse" / "smoke.json")
    code = main(["report", "--config", SMOKE, "--out", str(out), "--format", "csv"])
    assert code == EXIT_OK
    assert (out / "report" / "smoke.csv").read_text() == ",".join(REPORT_FIELDS) + "\n"
    assert "warning" in capsys.readouterr().err
    assert not list((out / "report").glob("*.png"))


def test_show_config(capsys):
    assert main(["show-config", "--config", SMOKE, "--seed", "7"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "seed: 7" in text and "name: smoke" in text


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: {q: [9]}\n")
    assert main(["show-config", "--config", str(p)]) == EXIT_CONFIG
    assert "grid.q[0]" in capsys.readouterr().err


def test_bad_jobs(capsys):
    assert main(["show-config", "--jobs", "0"]) == EXIT_CONFIG


def test_partial_failure_exit_code(smoke_run, tmp_path, capsys):
    import shutil

    _, ref = smoke_run
    out = tmp_path / "out"
    shutil.copytree(ref, out)
    doc = {"schema_version": 1, "kind": "error", "stage": "prune", "error": "InvalidSparsityError: injected"}
    (out / "prune" / "smoke_q8_p50_random.json").write_text(json.dumps(doc))
    assert main(["dse", "--config", SMOKE, "--out", str(out), "--jobs", "1"]) == EXIT_PARTIAL
    assert "q=8 p=50 pruner=random" in capsys.readouterr().err
