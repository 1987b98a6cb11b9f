import csv
import io
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from delaystab.cli import (EXIT_ERROR, EXIT_STABLE, EXIT_UNSTABLE, REPORT_SCHEMA, SWEEP_COLUMNS, emit_results,
                           exit_code, main, report_row, run_check, run_sweep, to_csv)
from delaystab.config import ConfigError, config_from_dict, parse_config, safe_eval

ROOT = Path(__file__).resolve().parent.parent


def two_state_doc(h=0.1, p=-0.1, **extra):
    doc = {
        "system": {"A": [[[0, 0], [0, 0]], [[-1, 0.5], [0, "p"]]], "G": [[[0, 0], [-1, 0]]], "h": "h"},
        "parameters": {"h": h, "p": p},
        "numerics": {"N": 200, "P": 400},
    }
    doc.update(extra)
    return doc


def test_vehicle_chain_config_parses():
    cfg = parse_config(ROOT / "configs" / "example1.json")
    assert cfg.free_parameters == ["k1", "k2"] and cfg.n_points == 25
    s = cfg.instantiate({"k1": 1.0, "k2": 2.0})
    assert s.m == 3 and s.h == 0.05
    np.testing.assert_allclose(s.A[1], [[0, -2.5], [-2.5, 0]])
    np.testing.assert_allclose(s.G[1], np.diag([-10.0, -20.0]))
    np.testing.assert_array_equal(s.G[0], 0.0)


def test_all_shipped_configs_parse():
    for p in sorted((ROOT / "configs").glob("*.json")):
        parse_config(p)


def test_sweep_count_zero_rejected():
    doc = two_state_doc()
    doc["parameters"]["p"] = {"min": -1, "max": 0, "count": 0}
    with pytest.raises(ConfigError, match="count"):
        config_from_dict(doc)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="foo"):
        config_from_dict(two_state_doc(foo=1))
    doc = two_state_doc()
    doc["system"]["foo"] = 1
    with pytest.raises(ConfigError, match="foo"):
        config_from_dict(doc)


def test_parameter_usage_checked():
    doc = two_state_doc()
    doc["parameters"]["q"] = 1.0
    with pytest.raises(ConfigError, match="q"):
        config_from_dict(doc)
    doc = two_state_doc()
    del doc["parameters"]["p"]
    with pytest.raises(ConfigError, match="undeclared"):
        config_from_dict(doc)


def test_json_syntax_error_reports_position(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{"system": {\n  "A": [1, 2],,\n}}')
    with pytest.raises(ConfigError, match="line 2"):
        parse_config(f)


def test_safe_eval():
    assert safe_eval("-k1 / (2 * 0.05)", {"k1": 1.5}) == pytest.approx(-15.0)
    assert safe_eval("sqrt(2) * pi", {}) == pytest.approx(2 ** 0.5 * np.pi)
    for bad in ("__import__('os')", "k.real", "[1][0]"):
        with pytest.raises(ValueError):
            safe_eval(bad, {"k": 1.0})


def test_check_report_and_schema():
    rep = run_check(config_from_dict(two_state_doc()))
    jsonschema.validate(rep, REPORT_SCHEMA)
    jsonschema.validate(json.loads(json.dumps(rep)), REPORT_SCHEMA)
    assert rep["verdict_thm8"] == rep["verdict_thm9"] == "Stable"
    assert exit_code(rep) == EXIT_STABLE


def test_exit_codes():
    assert exit_code({"verdict_thm8": "Unstable", "verdict_thm9": "Unstable"}) == EXIT_UNSTABLE
    assert exit_code({"verdict_thm8": "LyapunovConditionFails",
                      "verdict_thm9": "LyapunovConditionFails"}) == EXIT_UNSTABLE
    assert exit_code({"verdict_thm8": "Marginal", "verdict_thm9": "Stable"}) == 2
    assert exit_code({"verdict_thm8": "Stable", "verdict_thm9": "Unstable"}) == EXIT_ERROR
    assert exit_code({"verdict_thm8": "Stable", "verdict_thm9": "Stable", "consistent": False}) == EXIT_ERROR
    assert exit_code({"verdict_thm8": "Error", "verdict_thm9": "Stable"}) == EXIT_ERROR


def test_zero_system_degenerate_path(tmp_path):
    doc = {"system": {"A": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]], "G": [[[0, 0], [0, 0]]], "h": 1.0}}
    rep = run_check(config_from_dict(doc))
    assert rep["lyapunov_condition"] is False
    assert rep["verdict_thm8"] == "LyapunovConditionFails"
    assert rep["oracle_verdict"] != "Stable"
    assert exit_code(rep) == EXIT_UNSTABLE


@pytest.fixture(scope="module")
def small_sweep():
    doc = two_state_doc()
    doc["parameters"] = {"h": 0.2, "p": {"min": -1.5, "max": -0.3, "count": 3}}
    doc["numerics"]["oracle"] = True
    cfg = config_from_dict(doc)
    return cfg, run_sweep(cfg)


def test_sweep_rows(small_sweep):
    cfg, (rows, reports) = small_sweep
    assert len(rows) == cfg.n_points == 3
    assert [r["p2"] for r in rows] == [-1.5, -0.9, -0.3]
    for r in reports:
        assert r["consistent"] is not False
    text = to_csv(rows, SWEEP_COLUMNS)
    parsed = list(csv.reader(io.StringIO(text)))
    assert parsed[0] == SWEEP_COLUMNS and len(parsed) == 4
    assert "\r" not in text


def test_row_major_order():
    doc = two_state_doc()
    doc["parameters"] = {"h": {"min": 0.1, "max": 0.2, "count": 2}, "p": {"min": -1, "max": 0, "count": 3}}
    pts = config_from_dict(doc).points()
    assert [(d["h"], d["p"]) for d in pts] == [(0.1, -1), (0.1, -0.5), (0.1, 0), (0.2, -1), (0.2, -0.5), (0.2, 0)]


def test_single_point_sweep_equals_check():
    doc = two_state_doc()
    doc["parameters"]["p"] = {"min": -0.1, "max": -0.1, "count": 1}
    cfg = config_from_dict(doc)
    rows, _ = run_sweep(cfg)
    ref = report_row(run_check(cfg), ["h", "p"])
    drop = lambda r: {k: v for k, v in r.items() if k != "t_total_sec"}  # noqa: E731
    assert len(rows) == 1 and drop(rows[0]) == drop(ref)


def test_emission_is_byte_identical(tmp_path, small_sweep):
    _, (rows, reports) = small_sweep
    a = emit_results(rows, tmp_path / "a.csv", "csv", SWEEP_COLUMNS).read_bytes()
    b = emit_results(rows, tmp_path / "b.csv", "csv", SWEEP_COLUMNS).read_bytes()
    assert a == b and a.startswith(b"p1,p2,")
    a = emit_results(reports[0], tmp_path / "a.json").read_bytes()
    b = emit_results(reports[0], tmp_path / "b.json").read_bytes()
    assert a == b


def test_main_subcommands(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(two_state_doc()))
    out = str(tmp_path / "out")
    assert main(["check", "--config", str(cfg), "--out", out]) == EXIT_STABLE
    jsonschema.validate(json.loads((tmp_path / "out" / "report.json").read_text()), REPORT_SCHEMA)
    assert main(["lyapmat", "--config", str(cfg), "--out", out, "--points", "10"]) == 0
    lines = (tmp_path / "out" / "lyapmat.csv").read_text().splitlines()
    assert lines[0] == "tau,U00,U01,U10,U11" and len(lines) == 1 + 21
    assert main(["fundamental", "--config", str(cfg), "--out", out]) == 0
    assert main(["oracle", "--config", str(cfg), "--out", out, "--trace"]) == EXIT_STABLE
    assert (tmp_path / "out" / "contour.csv").exists()


def test_main_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(two_state_doc(foo=1)))
    assert main(["check", "--config", str(cfg)]) == EXIT_ERROR
    assert "foo" in capsys.readouterr().err


def test_main_unstable(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(two_state_doc(h=0.2, p=2.0)))
    assert main(["check", "--config", str(cfg), "--out", str(tmp_path), "--no-oracle"]) == EXIT_UNSTABLE
