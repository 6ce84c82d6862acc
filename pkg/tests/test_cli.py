import csv
import io
import json

import pytest

from twoparty_lab import cli
from twoparty_lab.cli import (
    SUMMARY_COLUMNS,
    ConfigError,
    build_config,
    emit_summary,
    main,
    read_config_file,
    report_json,
    run_scenario,
)
from twoparty_lab.minimax import NumericsFault


def test_build_config_defaults_and_overrides():
    cfg = build_config({"scenario": "lemma1", "seed": 3}, {"seed": 5, "out": None})
    assert cfg.seed == 5 and cfg.deltas == [0.01, 0.05] and cfg.fixture == ["reveal-eq-n2"]


@pytest.mark.parametrize("values", [
    {"scenario": "lemma1", "deltas": [2.0]},
    {"scenario": "lemma1", "colour": "red"},
    {"scenario": "nope"},
    {"scenario": "theorem2", "net_mode": "random"},
    {"scenario": "theorem2", "net_eps": -0.1},
    {"scenario": "lemma1", "fixture": ["no-such-fixture"]},
    {"seed": 1},
])
def test_invalid_configs_raise(values):
    with pytest.raises(ConfigError):
        build_config(values, {})


def test_depolarized_fixture_ids_are_accepted():
    cfg = build_config({"scenario": "lemma1", "fixture": "reveal-eq-n1-dep0.05"}, {})
    assert cfg.fixture == ["reveal-eq-n1-dep0.05"]


def test_read_toml_and_json(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text('scenario = "lemma1"\ndeltas = [0.01]\nseed = 4\n')
    assert read_config_file(toml) == {"scenario": "lemma1", "deltas": [0.01], "seed": 4}
    js = tmp_path / "c.json"
    js.write_text('{"scenario": "appendix"}')
    assert read_config_file(js)["scenario"] == "appendix"
    bad = tmp_path / "bad.toml"
    bad.write_text("scenario = ")
    with pytest.raises(ConfigError):
        read_config_file(bad)


def test_exit_code_two_for_bad_delta_and_unknown_key(tmp_path, capsys):
    assert main(["run", "lemma1", "--delta", "2.0", "--out", str(tmp_path)]) == 2
    conf = tmp_path / "c.toml"
    conf.write_text('scenario = "lemma1"\nunknown_key = 1\n')
    assert main(["run", "lemma1", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert main(["run", "no-such-scenario"]) == 2
    assert "config error" in capsys.readouterr().err


def test_list_fixtures(capsys):
    assert main(["list-fixtures"]) == 0
    out = capsys.readouterr().out.split()
    assert "reveal-eq-n2" in out and "appendix-n1" in out


def test_selftest_command(capsys):
    assert main(["selftest", "--instances", "20"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_numerics_fault_exit_three_writes_diagnostic(tmp_path, monkeypatch):
    def boom(fid, delta, cfg):
        raise NumericsFault("duality gap 1e-3")

    monkeypatch.setitem(cli.TASKS, "appendix", boom)
    assert main(["run", "appendix", "--out", str(tmp_path)]) == 3
    dump = json.loads((tmp_path / "diagnostic.json").read_text())
    assert dump["error"] == "NumericsFault" and dump["config"]["scenario"] == "appendix"


def test_run_writes_outputs(tmp_path):
    assert main(["run", "appendix", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "appendix.json").read_text())
    assert report["schema_version"] == 1 and report["pass"] is True
    checks = list(csv.DictReader(io.StringIO((tmp_path / "appendix_checks.csv").read_text())))
    assert {c["check"] for c in checks} >= {"tv_without_R", "distance_with_R"}
    header = (tmp_path / "appendix_summary.csv").read_text().splitlines()[0]
    assert header.split(",") == list(SUMMARY_COLUMNS)


def test_emit_summary_marks_unrun_bounds():
    report = {"scenario": "x", "results": [
        {"fixture": "f", "delta": 0.01, "pass": True, "checks": [],
         "summary": {"eps_sec": 0.1, "lemma1_pass": True}},
        {"fixture": "g", "delta": None, "pass": False, "checks": [], "summary": {}},
    ]}
    text, csv_text = emit_summary([report])
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    assert rows[0]["lemma1_pass"] == "true" and rows[0]["theorem2_pass"] == "not_run"
    assert rows[0]["eps_sec"] == "0.1" and rows[0]["pass"] == "true"
    assert rows[1]["pass"] == "false" and rows[1]["delta"] == ""
    assert "not_run" in text
    with pytest.raises(ValueError):
        emit_summary([])


@pytest.mark.parametrize("values", [
    {"scenario": "theorem1"},
    {"scenario": "appendix"},
    {"scenario": "qcore-selftest", "instances": 30, "seed": 2},
])
def test_reports_are_byte_identical(values):
    a = report_json(run_scenario(build_config(values, {})))
    b = report_json(run_scenario(build_config(values, {})))
    assert a == b
