"""Tests for the command-line interface."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from heomcal.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def test_help_lists_subcommands(runner):
    res = runner.invoke(main, ["--help"])
    assert res.exit_code == 0
    for sub in ("run-dag", "audit", "bath-audit", "report"):
        assert sub in res.output


def test_missing_platform_file_fails(runner, tmp_path):
    res = runner.invoke(main, [
        "run-dag", "--platform", str(tmp_path / "nope.yaml"),
        "--out", str(tmp_path / "out"),
    ])
    assert res.exit_code != 0


def test_audit_without_suite_selection_is_usage_error(runner, tmp_path):
    res = runner.invoke(main, ["audit", "--out", str(tmp_path / "out")])
    assert res.exit_code != 0
    assert "select at least one audit" in res.output


def test_audit_rejects_single_depth(runner, tmp_path, config_path):
    out = tmp_path / "out"
    res = runner.invoke(main, [
        "audit", "--platform", str(config_path), "--out", str(out),
        "--l-sweep", "3",
    ])
    assert res.exit_code == 2
    assert "at least two depths" in res.output


def test_report_on_missing_directory_fails(runner, tmp_path):
    res = runner.invoke(main, ["report", "--out", str(tmp_path / "absent")])
    assert res.exit_code == 1


def test_error_json_written_on_bad_config(runner, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("platform: {}\n")
    out = tmp_path / "out"
    res = runner.invoke(main, [
        "run-dag", "--platform", str(bad), "--out", str(out),
    ])
    assert res.exit_code == 1
    err = json.loads((out / "error.json").read_text())
    assert err["command"] == "run-dag"
    assert err["message"]
    assert err["error_type"]


def test_run_dag_restricted_to_unitary_backend(runner, tmp_path):
    out = tmp_path / "uni"
    res = runner.invoke(main, [
        "run-dag", "--backend", "sesolve", "--executor", "inline",
        "--bootstrap-b", "100", "--out", str(out),
    ])
    assert res.exit_code == 0, res.output
    record = json.loads((out / "run_record.json").read_text())
    assert record["backends"] == ["unitary"]
    cells = {(c["protocol"], c["backend"]) for c in record["cells"]}
    assert cells == {("rabi", "unitary"), ("ramsey", "unitary")}
    # a single backend cannot populate the comparison matrix
    assert record.get("verdicts") in (None, [])
    timing = json.loads((out / "dag_timing.json").read_text())
    assert {n["id"] for n in timing["nodes"]} == {
        "unitary.rabi", "unitary.ramsey",
    }
    manifest = json.loads((out / "manifest.json").read_text())
    names = {Path(a).name for a in manifest["artifacts"]}
    assert {"run_record.json", "dag_timing.json"} <= names


def test_bath_audit_writes_artifacts(runner, tmp_path):
    out = tmp_path / "bath"
    res = runner.invoke(main, ["bath-audit", "--out", str(out)])
    assert res.exit_code == 0, res.output
    payload = json.loads((out / "bath_audit.json").read_text())
    assert payload["rel_rms_residual"] <= 1e-3
    assert len(payload["modes"]) >= 1
    assert (out / "fig_bath_correlation.csv").exists()


def test_bath_audit_reproducible_bytes(runner, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        res = runner.invoke(main, ["bath-audit", "--out", str(out)])
        assert res.exit_code == 0, res.output
        outs.append((out / "bath_audit.json").read_bytes())
    assert outs[0] == outs[1]
