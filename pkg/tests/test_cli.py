import csv
import json
import subprocess
import sys

import pytest

from relayalloc.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from relayalloc.experiments import parse_csv
from relayalloc.scenario import load_scenario

SMALL = ["-K", "2", "-N", "1", "-M", "3"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_single(tmp_path, capsys):
    path = tmp_path / "s.json"
    code, _, _ = run(["generate", *SMALL, "--seed", "4", "--out", str(path)], capsys)
    assert code == EXIT_OK
    s = load_scenario(path)
    assert s.layout.seed == 4 and s.gains_direct.shape == (2, 3)


def test_generate_many(tmp_path, capsys):
    code, out, _ = run(["generate", *SMALL, "--realizations", "3", "--out", str(tmp_path / "d")],
                       capsys)
    assert code == EXIT_OK
    files = sorted((tmp_path / "d").glob("*.json"))
    assert len(files) == 3
    assert len({load_scenario(f).layout.seed for f in files}) == 3


def test_solve_prints_report_and_trace(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    code, out, _ = run(["solve", *SMALL, "--algo", "ncp", "--out", str(trace)], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["converged"] and doc["solution"]["feasibility"]["feasible"]
    assert doc["trace"][0]["iter"] == 1
    rows = list(csv.reader(open(trace)))
    assert rows[0] == ["iter", "p_tot", "penalty_value", "penalty_factor"]


def test_solve_scenario_file_matches_oracle(tmp_path, capsys):
    path = tmp_path / "s.json"
    run(["generate", *SMALL, "--seed", "8", "--out", str(path)], capsys)
    _, out, _ = run(["solve", "--scenario", str(path), "--algo", "qp"], capsys)
    sca = json.loads(out)["total_power_w"]
    code, out, _ = run(["oracle", "--scenario", str(path)], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["total_power_w"] <= sca * (1 + 1e-9)


def test_solve_oracle_mode(capsys):
    code, out, _ = run(["solve", *SMALL, "--algo", "oracle"], capsys)
    assert code == EXIT_OK and json.loads(out)["method"] == "assignment"


def test_oracle_enumerate_and_cost_csv(tmp_path, capsys):
    costs = tmp_path / "c.csv"
    code, out, _ = run(["oracle", *SMALL, "--algo", "enumerate", "--out", str(costs)], capsys)
    assert code == EXIT_OK and json.loads(out)["method"] == "enumeration"
    assert len(costs.read_text().splitlines()) == 1 + 2 * 3 * 2


def test_oracle_too_large_is_config_error(capsys):
    code, _, err = run(["oracle", "-K", "8", "-N", "4", "-M", "10", "--algo", "enumerate"], capsys)
    assert code == EXIT_CONFIG and "exceed" in err


def test_sweep(tmp_path, capsys):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"parameter": "theta", "values": [0.3, 0.6],
                               "fixed": {"K": 2, "N": 2, "M": 4}, "realizations": 2,
                               "algorithm": "qp"}))
    out_csv, recs = tmp_path / "agg.csv", tmp_path / "rec.csv"
    code, out, _ = run(["sweep", str(cfg), "--seed", "3", "--out", str(out_csv),
                        "--records", str(recs)], capsys)
    assert code == EXIT_OK and "dBm" in out
    res = parse_csv(out_csv.read_text())
    assert [r.value for r in res.rows] == [0.3, 0.6]
    assert len(recs.read_text().splitlines()) == 5
    # same config, same bytes
    again = tmp_path / "agg2.csv"
    run(["sweep", str(cfg), "--seed", "3", "--out", str(again)], capsys)
    assert again.read_bytes() == out_csv.read_bytes()


def test_sweep_to_stdout_with_override(tmp_path, capsys):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"parameter": "K", "values": [1, 2], "fixed": {"N": 1, "M": 3},
                               "realizations": 5}))
    code, out, err = run(["sweep", str(cfg), "--realizations", "1", "--algo", "oracle"], capsys)
    assert code == EXIT_OK
    assert out.startswith("parameter,value") and "sweep over K" in err
    assert all(r.realizations == 1 for r in parse_csv(out).rows)


def test_sweep_fixed_layout(tmp_path, capsys):
    scen = tmp_path / "s.json"
    run(["generate", "-K", "3", "-N", "1", "-M", "3", "--out", str(scen)], capsys)
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"parameter": "K", "values": [2, 3], "fixed": {"N": 1, "M": 3},
                               "realizations": 2, "algorithm": "oracle"}))
    code, _, _ = run(["sweep", str(cfg), "--fixed-layout", str(scen)], capsys)
    assert code == EXIT_OK


def test_compare(tmp_path, capsys):
    out_csv = tmp_path / "pair.csv"
    code, out, _ = run(["compare", *SMALL, "--realizations", "3", "--out", str(out_csv)], capsys)
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["realizations"] == 3
    assert len(out_csv.read_text().splitlines()) == 4


@pytest.mark.parametrize("argv", [
    ["generate", "-K", "5", "-M", "3", "--out", "x.json"],
    ["generate", "--theta", "1.5", "--out", "x.json"],
    ["generate", "--realizations", "0", "--out", "x"],
    ["solve", "--scenario", "/nonexistent.json"],
    ["solve", *SMALL, "--eps", "2"],
    ["solve", *SMALL, "--eta", "0.5"],
    ["sweep", "/nonexistent.json"],
    ["compare", *SMALL, "--realizations", "0"],
])
def test_config_errors(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(argv, capsys)
    assert code == EXIT_CONFIG and "config error" in err


def test_bad_sweep_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"parameter": "M", "values": [3]}))
    assert run(["sweep", str(cfg)], capsys)[0] == EXIT_CONFIG
    cfg.write_text("{not json")
    assert run(["sweep", str(cfg)], capsys)[0] == EXIT_CONFIG


def test_newer_scenario_schema(tmp_path, capsys):
    path = tmp_path / "s.json"
    run(["generate", *SMALL, "--out", str(path)], capsys)
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    path.write_text(json.dumps(doc))
    code, _, err = run(["oracle", "--scenario", str(path)], capsys)
    assert code == EXIT_CONFIG and "schema version 99" in err


def test_global_failure_exit_code(capsys):
    code, _, err = run(["solve", "-K", "1", "-N", "0", "-M", "1", "--payload", "198000"], capsys)
    assert code == EXIT_FAILURE and "error" in err
    code, _, _ = run(["solve", *SMALL, "--max-iters", "1"], capsys)
    assert code == EXIT_FAILURE


def test_argparse_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--algo", "simplex"])
    assert exc.value.code == 2


def test_console_script_module():
    out = subprocess.run([sys.executable, "-m", "relayalloc.cli", "--help"], capture_output=True,
                         text=True, check=True)
    assert "generate" in out.stdout and "sweep" in out.stdout
