import json

import pytest
from click.testing import CliRunner

from tnkit.cli import PipelineConfig, cli


def invoke(*args):
    return CliRunner().invoke(cli, list(args))


def report_of(result):
    return json.loads(result.output[result.output.index("{"):])


def test_certify_passes(tmp_path):
    r = invoke("certify", "--out", str(tmp_path), "--no-timing")
    assert r.exit_code == 0, r.output
    rep = report_of(r)
    assert rep["command"] == "certify" and rep["timing"] is None
    assert {c["status"] for c in rep["clauses"]} == {"PASS"}
    assert (tmp_path / "certify.json").exists()
    assert (tmp_path / "certificate.json").exists()


def test_certify_with_zero_constants_is_certificate_failure():
    r = invoke("certify", "--zero-cd", "--no-timing")
    assert r.exit_code == 1
    assert any(c["status"] == "FAIL" for c in report_of(r)["clauses"])


def test_output_is_deterministic_without_timing(tmp_path):
    a = invoke("certify", "--no-timing", "--seed", "4")
    b = invoke("certify", "--no-timing", "--seed", "4")
    assert a.output == b.output


@pytest.mark.parametrize("args", [
    ("wave", "--resolution", "30"),
    ("frobnicate",),
    ("certify", "--n", "1"),
    ("report",),
])
def test_usage_errors(args):
    assert invoke(*args).exit_code == 3


def test_unknown_config_key(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"n": 2, "bogus": 1}))
    assert invoke("certify", "--config", str(p)).exit_code == 3


def test_config_file_and_override(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"n": 3, "seed": 7}))
    cfg = PipelineConfig.load(str(p), seed=9)
    assert cfg.n == 3 and cfg.seed == 9


def test_spread_and_report(tmp_path):
    r = invoke("spread", "--resolution", "16", "--out", str(tmp_path), "--no-timing")
    assert r.exit_code == 0, r.output
    assert (tmp_path / "spread.csv").read_text().splitlines()[0].startswith("x1,x2,t,phi1")
    r = invoke("certify", "--out", str(tmp_path), "--no-timing")
    assert r.exit_code == 0
    r = invoke("report", "--out", str(tmp_path), "--no-timing")
    assert r.exit_code == 0, r.output
    ids = [c["id"] for c in report_of(r)["clauses"]]
    assert any(i.startswith("certify") for i in ids) and any(i.startswith("spread") for i in ids)


def test_construct_f(tmp_path):
    r = invoke("construct-f", "--out", str(tmp_path), "--no-timing")
    assert r.exit_code == 0, r.output
    assert (tmp_path / "energy.json").exists() and (tmp_path / "vertices.csv").exists()
