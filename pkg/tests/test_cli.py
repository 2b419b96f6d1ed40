import json
from pathlib import Path

import pytest

from ergodic_harvest.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = ["--paths", "8", "--horizon", "10", "--no-calibrate"]


def write_config(tmp_path, body, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return str(p)


LOGISTIC = {"model": {"kind": "logistic", "params": {"kappa": 1.0, "gamma": 1.0, "sigma": 0.5}}}


@pytest.fixture
def solved(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", str(CONFIGS / "logistic.json"), "--out", str(out)]) == 0
    return out


def test_solve_writes_artifacts(solved):
    doc = json.loads((solved / "solution.json").read_text())
    assert doc["validation_passed"]
    assert doc["solution"]["beta_star"] == pytest.approx(0.5970554900281129, abs=1e-6)
    man = json.loads((solved / "manifest.json").read_text())
    assert man["manifest"]["action"] == "solve"
    assert (solved / "validation.json").exists()


def test_verify_passes(solved, tmp_path, capsys):
    code = main(["verify", str(solved / "solution.json"), "--out", str(tmp_path / "v")])
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    assert json.loads((tmp_path / "v" / "report.json").read_text())["passed"]


@pytest.mark.parametrize("field,factor,delta", [("lambda_star", 1.0, 1e-3), ("beta_star", 1.001, 0.0)])
def test_verify_rejects_mutation(solved, tmp_path, field, factor, delta):
    doc = json.loads((solved / "solution.json").read_text())
    doc["solution"][field] = doc["solution"][field] * factor + delta
    bad = write_config(tmp_path, doc, "mutated.json")
    assert main(["verify", bad, "--out", str(tmp_path / "v")]) == 4


def test_verify_missing_file(tmp_path):
    assert main(["verify", str(tmp_path / "nope.json"), "--out", str(tmp_path / "v")]) == 2


def test_degenerate_model_exits_validation(tmp_path, capsys):
    code = main(["solve", str(CONFIGS / "logistic_degenerate.json"), "--out", str(tmp_path / "s")])
    assert code == 3
    assert "scale_divergence_at_zero" in capsys.readouterr().err
    assert main(["validate", str(CONFIGS / "logistic_degenerate.json"), "--out", str(tmp_path / "v")]) == 3


def test_override_reaches_solver(tmp_path):
    code = main(["solve", str(CONFIGS / "logistic_degenerate.json"), "--override", "--out", str(tmp_path / "s")])
    assert code == 4


@pytest.mark.parametrize("body,needle", [
    ("{\"model\": ", "cfg.json:1:"),
    (json.dumps({**LOGISTIC, "extras": {}}), "unknown section"),
    (json.dumps({"model": {"kind": "logistic", "params": {"kappa": 1, "gamma": 1, "sigma": 0.5}, "colour": 1}}),
     "unknown field"),
    (json.dumps({"model": {"kind": "logistic", "params": {"kappa": 1, "gamma": 1}}}), "missing"),
])
def test_bad_configs_exit_input(tmp_path, capsys, body, needle):
    p = tmp_path / "cfg.json"
    p.write_text(body)
    assert main(["solve", str(p), "--out", str(tmp_path / "s")]) == 2
    assert needle in capsys.readouterr().err


def test_simulate_invariants_exit_input(tmp_path):
    cfg = write_config(tmp_path, LOGISTIC)
    assert main(["simulate", cfg, "--dt", "-1", "--out", str(tmp_path / "s")]) == 2
    assert main(["simulate", cfg, "--paths", "0", "--out", str(tmp_path / "s")]) == 2


def test_simulate_artifacts(tmp_path):
    cfg = write_config(tmp_path, LOGISTIC)
    out = tmp_path / "sim"
    assert main(["simulate", cfg, *SMALL, "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["mode"] == "expected" and s["n_paths"] == 8
    assert "within_tolerance" in s["reference"]
    for name in ("paths.csv", "occupation.csv", "trace.csv", "manifest.json"):
        assert (out / name).exists()
    assert len((out / "paths.csv").read_text().splitlines()) == 9


def test_simulate_single_path_is_pathwise(tmp_path):
    cfg = write_config(tmp_path, LOGISTIC)
    out = tmp_path / "sim"
    assert main(["simulate", cfg, "--paths", "1", "--horizon", "20", "--no-calibrate", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["mode"] == "pathwise"


def test_simulate_uses_solution_file(solved, tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", str(CONFIGS / "logistic.json"), "--solution", str(solved / "solution.json"), *SMALL,
                 "--out", str(out)])
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    sol = json.loads((solved / "solution.json").read_text())["solution"]
    assert s["config"]["threshold"] == sol["beta_star"]


def test_simulate_failure_exit(tmp_path):
    # dt so coarse that Euler overshoots zero: the simulation aborts
    body = {"model": {"kind": "log_ou", "params": {"kappa": 1.0, "gamma": 0.0, "sigma": 1.0}}}
    cfg = write_config(tmp_path, body)
    code = main(["simulate", cfg, "--dt", "0.5", "--horizon", "50", "--paths", "4", "--no-calibrate",
                 "--out", str(tmp_path / "s")])
    assert code == 5


def test_sweep_empty_grid(tmp_path):
    cfg = write_config(tmp_path, {**LOGISTIC, "sweep": {"betas": []}})
    assert main(["sweep", cfg, "--out", str(tmp_path / "w")]) == 2


def test_sweep_artifacts(tmp_path):
    cfg = write_config(tmp_path, LOGISTIC)
    out = tmp_path / "w"
    assert main(["sweep", cfg, "--factors", "0.5,1,1.5", *SMALL, "--out", str(out)]) == 0
    doc = json.loads((out / "sweep.json").read_text())
    assert len(doc["rows"]) == 3
    assert doc["rows"][1]["beta"] == pytest.approx(doc["beta_star"])
    assert len((out / "sweep.csv").read_text().splitlines()) == 4


def test_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ERGODIC_HARVEST_OUT", str(tmp_path / "env"))
    assert main(["solve", str(CONFIGS / "logistic.json")]) == 0
    assert (tmp_path / "env" / "solve" / "solution.json").exists()


def test_manifest_replay_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    cfg = write_config(tmp_path, LOGISTIC)
    out = tmp_path / "sim"
    assert main(["simulate", cfg, *SMALL, "--threads", "1", "--out", str(out)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    replay = tmp_path / "replay.json"
    replay.write_bytes(first["manifest.json"])
    assert main(["simulate", str(replay), "--threads", "3", "--no-calibrate", "--out", str(out)]) == 0
    again = {p.name: p.read_bytes() for p in out.iterdir()}
    assert again == first
