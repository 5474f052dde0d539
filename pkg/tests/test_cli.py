"""CLI commands, exit codes, report schema and determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from fdual.cli import main
from fdual.market import instance_a

REQUIRED_KEYS = {"schema_version", "command", "instance_digest", "results",
                 "residuals", "wall_time_ms"}


@pytest.fixture
def instance_file(tmp_path):
    path = tmp_path / "instance_a.json"
    path.write_text(json.dumps(instance_a()))
    return str(path)


def run_cli(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


def test_validate_ok(instance_file, capsys):
    code, out = run_cli(capsys, ["validate", instance_file])
    assert code == 0
    report = json.loads(out)
    assert REQUIRED_KEYS <= set(report)
    assert report["results"]["valid"] is True
    assert report["results"]["nodes"] == 3


def test_validate_bad_lambda(tmp_path, capsys):
    doc = instance_a()
    doc["lambda"] = 1.2
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, out = run_cli(capsys, ["validate", str(path)])
    assert code == 2
    assert "lambda" in json.loads(out)["results"]["error"]


def test_validate_dangling_parent(tmp_path, capsys):
    doc = instance_a()
    doc["tree"][2]["parent"] = 9
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, _ = run_cli(capsys, ["validate", str(path)])
    assert code == 2


def test_cps_witness(instance_file, capsys):
    code, out = run_cli(capsys, ["cps", instance_file])
    assert code == 0
    report = json.loads(out)
    assert report["results"]["feasible"] is True
    assert max(report["residuals"]["martingale"]["value"],
               report["residuals"]["spread"]["value"]) <= 1e-9


def test_cps_price_query_inside(instance_file, capsys):
    code, out = run_cli(capsys, ["cps", instance_file, "--price-of", "0", "0.6"])
    assert code == 0
    query = json.loads(out)["results"]["price_query"]
    assert query["status"] == "inside"
    # 3 * Q(up) = 0.6
    assert query["q_cond"][1] == pytest.approx(0.2, abs=1e-6)


def test_cps_price_query_outside(instance_file, capsys):
    code, out = run_cli(capsys, ["cps", instance_file, "--price-of", "0", "10"])
    assert code == 3
    assert json.loads(out)["results"]["price_query"]["status"] == "outside"


def test_cps_infeasible_instance(tmp_path, capsys):
    doc = {
        "tree": [
            {"id": 0, "parent": None, "p": 1.0, "S": 1.0},
            {"id": 1, "parent": 0, "p": 1.0, "S": 5.0},
        ],
        "lambda": 0.25, "endowments": [], "utility": {"kind": "log"},
    }
    path = tmp_path / "nocps.json"
    path.write_text(json.dumps(doc))
    code, out = run_cli(capsys, ["cps", str(path)])
    assert code == 3
    assert json.loads(out)["results"]["feasible"] is False


def test_superhedge_upper_and_lower(instance_file, capsys):
    code, out = run_cli(capsys, ["superhedge", instance_file, "--claim-index", "0"])
    assert code == 0
    report = json.loads(out)
    assert report["results"]["price"]["value"] == pytest.approx(5.0 / 3.0, abs=1e-7)
    assert report["residuals"]["lp_vs_hedge_gap"]["value"] <= 1e-7

    code, out = run_cli(capsys, ["superhedge", instance_file, "--side", "lower"])
    assert code == 0
    assert json.loads(out)["results"]["price"]["value"] == pytest.approx(0.5, abs=1e-7)


def test_superhedge_inline_zero_claim(instance_file, capsys):
    code, out = run_cli(capsys, ["superhedge", instance_file, "--claim", "0,0"])
    assert code == 0
    assert json.loads(out)["results"]["price"]["value"] == pytest.approx(0.0, abs=1e-8)


def test_solve_full_pipeline(instance_file, capsys):
    code, out = run_cli(capsys, ["solve", instance_file, "--x", "1", "--q", "1",
                                 "--dual", "--shadow"])
    assert code == 0
    report = json.loads(out)
    assert report["results"]["primal"]["u"]["value"] == pytest.approx(np.log(2), abs=1e-6)
    assert report["results"]["dual"]["y"]["value"] == pytest.approx(0.625, abs=1e-5)
    assert report["results"]["dual"]["r"]["value"][0] == pytest.approx(0.375, abs=1e-5)
    assert report["residuals"]["duality_gap"]["value"] <= 1e-5
    assert report["results"]["shadow"]["verdict"] == "classic"
    assert report["results"]["shadow"]["marginal_prices"]["value"][0] == \
        pytest.approx(0.6, abs=1e-5)


def test_solve_outside_k(instance_file, capsys):
    code, out = run_cli(capsys, ["solve", instance_file, "--x", "-1", "--q", "1"])
    assert code == 5


def test_solve_no_trade(instance_file, capsys):
    code, out = run_cli(capsys, ["solve", instance_file, "--x", "1", "--q", "0"])
    assert code == 0
    report = json.loads(out)
    assert abs(report["results"]["primal"]["u"]["value"]) <= 1e-6
    assert report["results"]["primal"]["trades"] == [] or all(
        rec["buy"] + rec["sell"] <= 1e-6
        for rec in report["results"]["primal"]["trades"])


def test_report_deterministic_modulo_walltime(instance_file, capsys):
    _, out1 = run_cli(capsys, ["solve", instance_file, "--x", "1", "--q", "1", "--dual"])
    _, out2 = run_cli(capsys, ["solve", instance_file, "--x", "1", "--q", "1", "--dual"])
    r1, r2 = json.loads(out1), json.loads(out2)
    r1.pop("wall_time_ms")
    r2.pop("wall_time_ms")
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)


def test_text_report(instance_file, capsys):
    code, out = run_cli(capsys, ["validate", instance_file, "--report", "text"])
    assert code == 0
    assert "valid: True" in out


def test_suite_small(capsys):
    code, out = run_cli(capsys, ["suite", "--seed", "7", "--count", "2",
                                 "--max-depth", "3"])
    assert code == 0
    report = json.loads(out)
    assert report["results"]["n_failed"] == 0


def test_suite_fault_injection(capsys):
    code, out = run_cli(capsys, ["suite", "--seed", "7", "--count", "1",
                                 "--max-depth", "2", "--inject-fault", "spread-flip"])
    assert code == 1
    report = json.loads(out)
    assert "cps-valid" in report["results"]["failed"]


def test_suite_empty(capsys):
    code, out = run_cli(capsys, ["suite", "--count", "0"])
    assert code == 0
    assert json.loads(out)["results"]["n_checks"] == 0


def test_console_entry_point(instance_file):
    proc = subprocess.run([sys.executable, "-m", "fdual.cli", "validate",
                           instance_file], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"]["valid"] is True
