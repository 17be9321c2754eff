import json

import pytest

from pacing_dyn.cli import main
from pacing_dyn.reproduce import adversary_cap, lagrangian_cert


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, [json.loads(line) for line in out.splitlines() if line.strip()]


@pytest.fixture
def trace_csv(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n: 3\nT: 3000\neta: 0.05\ninitial_bids: [0.3, 0.2, 0.1]\n")
    out = tmp_path / "t.csv"
    code, _ = run_cli(capsys, "simulate", "--config", str(cfg), "--out", str(out))
    assert code == 0
    return out


def test_adversary_solve(capsys):
    code, (rec,) = run_cli(capsys, "adversary", "solve", "--rho-l", "0.5", "--rho-o", "0.5", "--T", "2",
                           "--eta", "0.5", "--b1", "0.5")
    assert code == 0
    assert rec["wins"] == 1 and rec["certificate_ok"]
    assert set(rec) >= {"instance", "wins", "cap", "feasible_cost", "certificate_ok"}


def test_adversary_solve_dp(capsys):
    code, (rec,) = run_cli(capsys, "adversary", "solve", "--rho-l", "0.5", "--rho-o", "0.5", "--T", "30",
                           "--method", "dp", "--grid", "256")
    assert code == 0 and rec["feasible_wins"] <= rec["wins"] <= rec["cap"]


def test_adversary_certify(tmp_path, capsys):
    sweep = tmp_path / "s.csv"
    sweep.write_text("rho_l,rho_o,eta\n0.3,0.7,0.25\n0.5,0.5,\n0.9,0.1,0.1\n")
    code, recs = run_cli(capsys, "adversary", "certify", "--T", "10", "--sweep-file", str(sweep))
    assert code == 0 and len(recs) == 3 and all(r["certificate_ok"] for r in recs)


@pytest.mark.parametrize("kind", ["potential", "discrepancy", "roundrobin"])
def test_analyze(trace_csv, capsys, kind):
    code, recs = run_cli(capsys, "analyze", kind, "--trace", str(trace_csv), "--window", "40", "--stride", "500")
    assert code == 0 and recs


def test_analyze_discrepancy_fields(trace_csv, capsys):
    _, recs = run_cli(capsys, "analyze", "discrepancy", "--trace", str(trace_csv), "--window", "40", "--stride", "1000")
    assert set(recs[0]) >= {"agent", "start", "length", "wins", "discrepancy", "guaranteed_floor", "floor_holds"}
    assert len(recs) == 3 * 3


def test_analyze_milestones(trace_csv, capsys):
    code, (ms,) = run_cli(capsys, "analyze", "milestones", "--trace", str(trace_csv))
    assert code == 0 and ms["band_holds"] and ms["t_sqrt_eta"] >= 1


def test_analyze_milestones_short_trace(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n: 2\nT: 300\neta: 0.05\n")
    out = tmp_path / "short.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["analyze", "milestones", "--trace", str(out)]) == 2


def test_reproduce_empty_suite(capsys):
    assert main(["reproduce"]) == 2
    assert main(["reproduce", ""]) == 2
    assert main(["reproduce", "nonsense"]) == 2


def test_reproduce_suite(capsys, tmp_path):
    report = tmp_path / "r.json"
    code, (v,) = run_cli(capsys, "reproduce", "round-robin", "--report", str(report))
    assert code == 0 and v["passed"]
    assert {"measured", "bound", "margin"} <= set(v)
    assert json.loads(report.read_text())[0]["suite"] == "round-robin"


def test_usage_error(capsys):
    assert main(["simulate"]) == 2
    assert main(["sweep", "--config", "/nonexistent.yaml"]) == 2


def test_sweep_command(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"n: 2\nT: 100\nsweep: {{eta: [0.1, 0.2]}}\noutput_dir: {tmp_path / 'o'}\n")
    code, recs = run_cli(capsys, "sweep", "--config", str(cfg))
    assert code == 0 and len(recs) == 2


def test_small_suites_produce_verdicts():
    v = adversary_cap(horizons=range(4, 8))
    assert v.passed and v.details["instances"] == 4 * 9
    v = lagrangian_cert(horizons=range(1, 6), etas=(0.5,))
    assert v.passed and v.margin >= 0
