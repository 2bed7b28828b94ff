import csv
import json

import numpy as np
import pytest

from contact_slam import cli
from contact_slam.simulator import NoiseConfig, resolve_scenario, synth_calibration
from contact_slam.tactile import write_samples_csv


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def push_variant(tmp_path, **over):
    data = json.loads(resolve_scenario("push_block").read_text())
    data.update(over)
    p = tmp_path / "variant.json"
    p.write_text(json.dumps(data))
    return p


# --------------------------------------------------------------------------- arguments

def test_help_and_bad_flags(capsys):
    assert run("--help") == 0
    assert run("explore", "--scenario", "socket_two_pin", "--bogus") == 2
    assert run() == 2


@pytest.mark.parametrize("flags", [["--particles", "0"], ["--gamma", "1.5"], ["--alpha1", "-1"],
                                   ["--max-iter", "0"], ["--noise-scale", "-1"]])
def test_invalid_config_exit_two(tmp_path, flags):
    assert run("explore", "--scenario", "socket_two_pin", "--out", tmp_path, *flags) == 2


def test_unknown_scenario_exit_two(tmp_path):
    assert run("explore", "--scenario", "nowhere", "--out", tmp_path) == 2


def test_wrong_task_exit_two(tmp_path):
    assert run("explore", "--scenario", "push_block", "--out", tmp_path) == 2


# --------------------------------------------------------------------------- calibration

def test_calibrate_noiseless_recovers_arms(tmp_path):
    assert run("synth-calibration", "--n", 60, "--noise-scale", 0, "--out", tmp_path) == 0
    assert run("calibrate", tmp_path / "calibration_samples.csv", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "calibration.json").read_text())
    arms = cli.DEFAULT_ARMS
    np.testing.assert_allclose(rep["lever_arms"]["left"], arms.left, atol=1e-6)
    np.testing.assert_allclose(rep["lever_arms"]["right"], arms.right, atol=1e-6)
    assert rep["residuals"]["max_mm"] < 1e-6


def test_calibrate_noisy_residual_small(tmp_path):
    assert run("synth-calibration", "--n", 60, "--seed", 2, "--out", tmp_path) == 0
    assert run("calibrate", tmp_path / "calibration_samples.csv", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "calibration.json").read_text())
    assert rep["residuals"]["mean_mm"] < 0.5


def test_calibrate_too_few_samples(tmp_path):
    p = tmp_path / "two.csv"
    write_samples_csv(p, synth_calibration(2, NoiseConfig.zero(), seed=0))
    assert run("calibrate", p, "--out", tmp_path) == 2
    assert not (tmp_path / "calibration.json").exists()


def test_calibrate_missing_and_malformed(tmp_path):
    assert run("calibrate", tmp_path / "absent.csv", "--out", tmp_path) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("calibrate", bad, "--out", tmp_path) == 2


# --------------------------------------------------------------------------- explore and push

@pytest.mark.parametrize("scenario", ["socket_two_pin", "socket_three_pin"])
def test_explore_seed_one(tmp_path, scenario):
    assert run("explore", "--scenario", scenario, "--seed", 1, "--out", tmp_path, "-v") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    s = rep["summary"]
    assert s["success"] and s["iterations"] <= 12 and s["final_error_mm"] <= 5
    with (tmp_path / "steps.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "particle_std_mm", "particle_count"]
    assert len(rows) == len(rep["steps"])
    assert (tmp_path / "solver_trace.csv").read_text().startswith("iteration,cost,step_norm")


def test_explore_iteration_cap_exit_one(tmp_path):
    assert run("explore", "--scenario", "socket_two_pin", "--max-iter", 1, "--out", tmp_path) == 1


def test_scenario_dir_env_var(tmp_path, monkeypatch):
    data = json.loads(resolve_scenario("socket_two_pin").read_text())
    data["name"] = "custom"
    (tmp_path / "custom.json").write_text(json.dumps(data))
    monkeypatch.setenv(cli.ENV_SCENARIO_DIR, str(tmp_path))
    assert run("explore", "--scenario", "custom", "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["scenario"] == "custom"


def test_push_seed_one(tmp_path):
    assert run("push", "--seed", 1, "--out", tmp_path) == 0
    s = json.loads((tmp_path / "report.json").read_text())["summary"]
    assert s["success"] and s["obstacle_error_mm"] <= 10


def test_push_without_obstacles(tmp_path):
    assert run("push", "--scenario", push_variant(tmp_path, obstacles=[]), "--out", tmp_path) == 0
    s = json.loads((tmp_path / "report.json").read_text())["summary"]
    assert s["success"] and s["explorations"] == 0


def test_push_block_already_in_target(tmp_path):
    target = {"id": "target", "vertices": [[-25, 15], [25, 15], [25, 65], [-25, 65]]}
    assert run("push", "--scenario", push_variant(tmp_path, obstacles=[], target=target), "--out", tmp_path) == 0
    s = json.loads((tmp_path / "report.json").read_text())["summary"]
    assert s["success"] and "already" in s["message"]


# --------------------------------------------------------------------------- benchmark

def test_benchmark_empty_suite(tmp_path):
    assert run("benchmark", "--scenarios", "--out", tmp_path) != 0
    assert run("benchmark", "--seeds", "--out", tmp_path) != 0


def test_benchmark_zero_noise(tmp_path):
    assert run("benchmark", "--noise-scale", 0, "--seeds", 1, 2, "--workers", 1, "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "benchmark_summary.json").read_text())
    assert summary["passed"] and all(r["success"] for r in summary["runs"])
    with (tmp_path / "benchmark.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_reports_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("explore", "--scenario", "socket_three_pin", "--seed", 3, "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_aggregate_order_independent():
    rows = [{"scenario": "a", "seed": s, "success": s % 2 == 0, "iterations": s, "final_error_mm": s / 10}
            for s in range(1, 6)]
    assert cli.aggregate(rows) == cli.aggregate(rows[::-1])
