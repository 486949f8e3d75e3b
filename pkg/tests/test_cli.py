import json

import pytest

from branchlab.cli import dispatch


def test_simulate_deterministic_output(tmp_path):
    out1 = tmp_path / "a.jsonl"
    out2 = tmp_path / "b.jsonl"
    args = ["simulate", "--t", "10", "--reps", "10", "--seed", "7"]
    assert dispatch(args + ["--out", str(out1)]) == 0
    assert dispatch(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    payload = json.loads(out1.read_text().splitlines()[0])
    assert {"seed_path", "attempts", "n_t", "snapshot", "horizon"} <= set(payload)


def test_simulate_conditioned_has_survivors(tmp_path):
    out = tmp_path / "c.jsonl"
    assert dispatch(["simulate", "--t", "15", "--reps", "5", "--seed", "3",
                     "--conditioned", "--out", str(out)]) == 0
    for line in out.read_text().splitlines():
        assert json.loads(line)["n_t"] >= 1


def test_simulate_arena_csv(tmp_path):
    out = tmp_path / "r.jsonl"
    csv = tmp_path / "arena.csv"
    assert dispatch(["simulate", "--t", "5", "--reps", "1", "--seed", "11",
                     "--conditioned", "--out", str(out), "--arena-csv", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "id,parent,birth,lifetime,displacement,alive"
    assert len(lines) > 1


def test_unknown_flag_exits_2(capsys):
    assert dispatch(["simulate", "--t", "5", "--seed", "1", "--bogus"]) == 2


def test_unknown_command_exits_2():
    assert dispatch(["frobnicate"]) == 2


def test_missing_seed_exits_2():
    assert dispatch(["simulate", "--t", "5"]) == 2


def test_bad_model_config_exits_2(tmp_path):
    cfg = tmp_path / "model.cfg"
    cfg.write_text("lifetime = exp:1.0\noffspring = 0.5,0.4,0.1\nmotion = bm:1.0\n")
    assert dispatch(["simulate", "--t", "5", "--seed", "1", "--model", str(cfg)]) == 2


def test_model_config_accepted(tmp_path):
    cfg = tmp_path / "model.cfg"
    cfg.write_text("lifetime = exp:2.0\noffspring = 0.5,0,0.5\nmotion = bm:1.0\n")
    out = tmp_path / "runs.jsonl"
    assert dispatch(["simulate", "--t", "5", "--seed", "1", "--model", str(cfg),
                     "--out", str(out)]) == 0


def test_verify_unknown_check_exits_2():
    assert dispatch(["verify", "nonsense", "--seed", "1"]) == 2


def test_verify_single_check_passes(tmp_path, capsys):
    report = tmp_path / "rows.jsonl"
    rc = dispatch(["verify", "solver-suite", "--seed", "1", "--report", str(report)])
    assert rc == 0
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert all(r["passed"] for r in rows)
    assert all(r["version"].startswith("branchlab-") for r in rows)
    out = capsys.readouterr().out
    assert "== PASS solver-suite" in out


def test_verify_report_deterministic(tmp_path):
    r1 = tmp_path / "a.jsonl"
    r2 = tmp_path / "b.jsonl"
    dispatch(["verify", "solver-suite", "--seed", "5", "--report", str(r1)])
    dispatch(["verify", "solver-suite", "--seed", "5", "--report", str(r2)])
    assert r1.read_bytes() == r2.read_bytes()


def test_coalescent_csv(tmp_path):
    out = tmp_path / "tau.csv"
    rc = dispatch(["coalescent", "--t", "10", "--k", "2", "--reps", "20",
                   "--seed", "9", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,k,tau1_over_t,n_t"
    for line in lines[1:]:
        t, k, tau, n_t = line.split(",")
        assert float(t) == 10.0
        assert 0.0 <= float(tau) <= 1.0


def test_loglaplace_summary(tmp_path):
    summary = tmp_path / "s.json"
    rc = dispatch(["loglaplace", "--f", "const:1.0", "--t", "1.0", "--summary", str(summary)])
    assert rc == 0
    payload = json.loads(summary.read_text())
    assert payload["functional"] == pytest.approx(0.5, abs=1e-4)


def test_loglaplace_csv(tmp_path):
    summary = tmp_path / "s.json"
    csv = tmp_path / "u.csv"
    rc = dispatch(["loglaplace", "--f", "gauss", "--t", "0.5", "--nx", "256", "--dt", "0.01",
                   "--summary", str(summary), "--out", str(csv), "--csv-times", "3"])
    assert rc == 0
    assert csv.read_text().startswith("t,x,u")


def test_superprocess_row(tmp_path):
    out = tmp_path / "sp.jsonl"
    rc = dispatch(["superprocess", "--n", "20", "--t", "1.0", "--reps", "50",
                   "--f", "const:1.0", "--seed", "13", "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["n"] == 20
    assert payload["solver_target"] == pytest.approx(0.5, abs=1e-3)
    assert payload["estimate"] == pytest.approx(0.5, abs=5 * payload["stderr"] + 0.05)


def test_superprocess_bad_f_exits_2():
    assert dispatch(["superprocess", "--n", "20", "--t", "1.0", "--f", "nope", "--seed", "1"]) == 2
