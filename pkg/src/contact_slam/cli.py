"""
Command-line entry point: calibration, single exploration and pushing runs,
and the seeded benchmark suite. Outputs are JSON and CSV only.

Exit codes: 0 success, 1 task failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimation import write_trace_csv
from .exploration import ExplorationConfig, run_policy
from .pushing import run_push
from .simulator import (CAL_BLOCK, DEFAULT_ARMS, InsertionWorld, NoiseConfig, ScenarioError, WorldState,
                        load_scenario, resolve_scenario, rng_streams, synth_calibration)
from .tactile import (CalibrationError, calibrate_lever_arms, estimate_contact_point, line_residuals,
                      load_samples_csv, net_force, resultant_torque, write_samples_csv)

log = logging.getLogger("contact_slam")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
ENV_SCENARIO_DIR = "CONTACT_SLAM_SCENARIO_DIR"
DEFAULT_SUITE = ("socket_two_pin", "socket_three_pin")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
# acceptance band for the benchmark means
ITER_BAND = (4.0, 12.0)
MAX_MEAN_ERROR = 5.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "socket_two_pin"
    seed: int = 1
    particles: int = 500
    alpha1: float = 1.0
    alpha2: float = 1.0
    gamma: float = 0.1
    delta_thr: float = 5.0
    n_thr: int = 10
    w_thr_factor: float = 1.0
    max_iter: int = 40
    noise_scale: float = 1.0
    out: str = "out"

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a seed is required")
        for k in ("particles", "delta_thr", "n_thr", "w_thr_factor", "max_iter"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        for k in ("alpha1", "alpha2", "gamma", "noise_scale"):
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{k} must be a finite non-negative number, got {v}")
        if self.gamma > 1:
            raise ConfigError(f"gamma is a likelihood and must not exceed 1, got {self.gamma}")

    def exploration(self) -> ExplorationConfig:
        return ExplorationConfig(n_particles=self.particles, alpha1=self.alpha1, alpha2=self.alpha2,
                                 gamma=self.gamma, delta_thr=self.delta_thr, n_thr=self.n_thr,
                                 w_thr_factor=self.w_thr_factor, max_iter=self.max_iter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d


def scenario_search() -> list[Path]:
    d = os.environ.get(ENV_SCENARIO_DIR)
    return [Path(d)] if d else []


def load_world(cfg: RunConfig) -> WorldState:
    path = resolve_scenario(cfg.scenario, scenario_search())
    w = load_scenario(path, seed=cfg.seed)
    if cfg.noise_scale != 1.0:
        w = load_scenario(path, seed=cfg.seed, noise=w.noise.scaled(cfg.noise_scale))
    return w


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_steps(path: Path, steps: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "particle_std_mm", "particle_count"])
        for s in steps:
            w.writerow([s["step"], f"{s['particle_std_mm']:.6f}", s["particle_count"]])


# --------------------------------------------------------------------------- runs

def explore_once(cfg: RunConfig) -> tuple[dict, list]:
    """One insertion run; returns the report dict and the solver trace."""
    w = load_world(cfg)
    if w.task != "insert":
        raise ConfigError(f"scenario {cfg.scenario!r} is a {w.task} task; use the matching command")
    rep = run_policy(InsertionWorld(w), cfg.exploration(), rng_streams(cfg.seed))
    out = rep.to_dict()
    out["config"] = cfg.to_dict()
    out["scenario"] = w.name
    return out, rep.solver_trace


def push_once(cfg: RunConfig) -> dict:
    w = load_world(cfg)
    if w.block is None:
        raise ConfigError(f"scenario {cfg.scenario!r} has no block to push")
    rep, _ = run_push(w, cfg.exploration(), rng_streams(cfg.seed))
    out = rep.to_dict()
    out["config"] = cfg.to_dict()
    out["scenario"] = w.name
    return out


def _bench_cell(cfg: RunConfig) -> dict:
    report, _ = explore_once(cfg)
    s = report["summary"]
    return {"scenario": report["scenario"], "seed": cfg.seed, "success": bool(s["success"]),
            "iterations": int(s["iterations"]), "final_error_mm": s["final_error_mm"]}


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Per-scenario means; independent of row order."""
    out = []
    for name in sorted({r["scenario"] for r in rows}):
        rs = [r for r in rows if r["scenario"] == name]
        errs = [r["final_error_mm"] for r in rs if r["final_error_mm"] is not None]
        out.append({"scenario": name, "runs": len(rs),
                    "success_rate": round(sum(r["success"] for r in rs) / len(rs), 6),
                    "mean_iterations": round(float(np.mean([r["iterations"] for r in rs])), 6),
                    "mean_final_error_mm": round(float(np.mean(errs)), 6) if errs else None})
    return out


def thresholds_met(means: Sequence[dict], rows: Sequence[dict]) -> list[str]:
    """Reasons the suite misses the acceptance band (empty when it passes)."""
    bad = [f"{r['scenario']} seed {r['seed']}: run failed" for r in rows if not r["success"]]
    for m in means:
        if not ITER_BAND[0] <= m["mean_iterations"] <= ITER_BAND[1]:
            bad.append(f"{m['scenario']}: mean iterations {m['mean_iterations']} outside {list(ITER_BAND)}")
        if m["mean_final_error_mm"] is None or m["mean_final_error_mm"] > MAX_MEAN_ERROR:
            bad.append(f"{m['scenario']}: mean error {m['mean_final_error_mm']} above {MAX_MEAN_ERROR} mm")
    return bad


def run_benchmark(base: RunConfig, scenarios: Sequence[str], seeds: Sequence[int],
                  workers: Optional[int] = None) -> list[dict]:
    cells = [replace(base, scenario=s, seed=k) for s in scenarios for k in seeds]
    if workers == 1 or len(cells) <= 1:
        rows = [_bench_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_cell, cells))
    return sorted(rows, key=lambda r: (r["scenario"], r["seed"]))


def calibration_stats(samples, arms) -> dict:
    """Residuals of the fitted lever arms against the recorded contact points.

    Per-axis values are the offsets from each contact point to the nearest
    point on its measured line of action.
    """
    offs = []
    for s in samples:
        F = net_force(s.left_wrench, s.right_wrench)
        M = resultant_torque(s.left_wrench, s.right_wrench, arms)
        f2 = float(F @ F)
        foot = np.cross(F, M) / f2
        u = F / np.sqrt(f2)
        d = s.contact_point - foot
        offs.append(d - (d @ u) * u)
    offs = np.abs(np.asarray(offs))
    dist = line_residuals(samples, arms)
    return {"samples": len(samples), "mean_mm": round(float(dist.mean()), 9), "max_mm": round(float(dist.max()), 9),
            "per_axis_mean_mm": [round(float(v), 9) for v in offs.mean(axis=0)],
            "per_axis_max_mm": [round(float(v), 9) for v in offs.max(axis=0)]}


def contact_point_errors(samples, arms, body=CAL_BLOCK) -> np.ndarray:
    """Distance from the estimated to the recorded contact point for each sample."""
    out = []
    for s in samples:
        F = net_force(s.left_wrench, s.right_wrench)
        M = resultant_torque(s.left_wrench, s.right_wrench, arms)
        p = estimate_contact_point(F, M, body)
        out.append(np.inf if p is None else float(np.linalg.norm(p - s.contact_point)))
    return np.asarray(out)


# --------------------------------------------------------------------------- commands

def cmd_calibrate(samples_csv, out_dir) -> int:
    try:
        samples = load_samples_csv(samples_csv)
        arms = calibrate_lever_arms(samples)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except CalibrationError as exc:
        log.error("calibration failed: %s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("bad calibration file: %s", exc)
        return EXIT_CONFIG
    report = {"lever_arms": {k: [round(v, 9) for v in vals] for k, vals in arms.to_dict().items()},
              "condition": round(float(arms.condition_number), 6), "residuals": calibration_stats(samples, arms)}
    _dump(Path(out_dir) / "calibration.json", report)
    log.info("lever arms left %s right %s; max residual %.3g mm", report["lever_arms"]["left"],
             report["lever_arms"]["right"], report["residuals"]["max_mm"])
    return EXIT_OK


def cmd_synth_calibration(n: int, seed: int, noise_scale: float, out_dir) -> int:
    if n < 1:
        log.error("need at least one sample")
        return EXIT_CONFIG
    samples = synth_calibration(n, NoiseConfig().scaled(noise_scale), seed, DEFAULT_ARMS)
    path = Path(out_dir) / "calibration_samples.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_samples_csv(path, samples)
    log.info("wrote %d samples to %s", n, path)
    return EXIT_OK


def cmd_explore(cfg: RunConfig, verbose: bool = False) -> int:
    report, trace = explore_once(cfg)
    out = Path(cfg.out)
    _dump(out / "report.json", report)
    _write_steps(out / "steps.csv", report["steps"])
    if verbose:
        write_trace_csv(out / "solver_trace.csv", trace)
    s = report["summary"]
    log.info("%s seed %d: success=%s iterations=%d error=%s mm", report["scenario"], cfg.seed,
             s["success"], s["iterations"], s["final_error_mm"])
    if not s["success"]:
        log.error("run failed: %s", s["message"] or "not aligned")
        return EXIT_FAIL
    return EXIT_OK


def cmd_push(cfg: RunConfig) -> int:
    report = push_once(cfg)
    out = Path(cfg.out)
    _dump(out / "report.json", report)
    _write_steps(out / "steps.csv", report["steps"])
    s = report["summary"]
    log.info("%s seed %d: success=%s obstacle error=%s mm", report["scenario"], cfg.seed, s["success"],
             s["obstacle_error_mm"])
    if not s["success"]:
        log.error("push failed: %s", s["message"])
        return EXIT_FAIL
    return EXIT_OK


def cmd_benchmark(base: RunConfig, scenarios: Sequence[str], seeds: Sequence[int],
                  workers: Optional[int] = None) -> int:
    if not scenarios or not seeds:
        log.error("empty suite: nothing to run")
        return EXIT_CONFIG
    for s in scenarios:
        load_world(replace(base, scenario=s))  # fail early on a bad scenario
    rows = run_benchmark(base, scenarios, seeds, workers)
    means = aggregate(rows)
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "benchmark.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["scenario", "seed", "success", "iterations", "final_error_mm"])
        w.writeheader()
        w.writerows(rows)
    with (out / "benchmark_means.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(means[0]))
        w.writeheader()
        w.writerows(means)
    bad = thresholds_met(means, rows)
    _dump(out / "benchmark_summary.json", {"runs": rows, "means": means, "passed": not bad, "failures": bad,
                                           "config": {k: v for k, v in base.to_dict().items()
                                                      if k not in ("scenario", "seed")}})
    for m in means:
        log.info("%s: success %.0f%% iterations %.2f error %s mm", m["scenario"], 100 * m["success_rate"],
                 m["mean_iterations"], m["mean_final_error_mm"])
    for b in bad:
        log.error("%s", b)
    return EXIT_FAIL if bad else EXIT_OK


# --------------------------------------------------------------------------- argument parsing

def _run_args(p: argparse.ArgumentParser, scenario: Optional[str]) -> None:
    p.add_argument("--scenario", default=scenario, required=scenario is None,
                   help="bundled scenario name or JSON path")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--particles", type=int, default=500)
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--delta-thr", type=float, default=5.0)
    p.add_argument("--n-thr", type=int, default=10)
    p.add_argument("--w-thr-factor", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=40)
    p.add_argument("--noise-scale", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true")
    ap = argparse.ArgumentParser(prog="contact-slam", description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit lever arms from a samples CSV")
    p.add_argument("samples_csv")

    p = sub.add_parser("synth-calibration", parents=[common], help="write synthetic calibration samples")
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise-scale", type=float, default=1.0)

    p = sub.add_parser("explore", parents=[common], help="run one insertion task")
    _run_args(p, None)
    p = sub.add_parser("push", parents=[common], help="run one pushing task")
    _run_args(p, "push_block")

    p = sub.add_parser("benchmark", parents=[common], help="run the scenario x seed suite")
    _run_args(p, "socket_two_pin")
    p.add_argument("--scenarios", nargs="*", default=list(DEFAULT_SUITE))
    p.add_argument("--seeds", nargs="*", type=int, default=list(DEFAULT_SEEDS))
    p.add_argument("--workers", type=int, default=None)
    return ap


def _config(a: argparse.Namespace) -> RunConfig:
    return RunConfig(scenario=a.scenario, seed=a.seed, particles=a.particles, alpha1=a.alpha1, alpha2=a.alpha2,
                     gamma=a.gamma, delta_thr=a.delta_thr, n_thr=a.n_thr, w_thr_factor=a.w_thr_factor,
                     max_iter=a.max_iter, noise_scale=a.noise_scale, out=a.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not a.verbose:
        logging.getLogger("contact_slam.exploration").setLevel(logging.ERROR)
        logging.getLogger("contact_slam.simulator").setLevel(logging.ERROR)
    try:
        if a.command == "calibrate":
            return cmd_calibrate(a.samples_csv, a.out)
        if a.command == "synth-calibration":
            if a.noise_scale < 0:
                raise ConfigError("noise-scale must be non-negative")
            return cmd_synth_calibration(a.n, a.seed, a.noise_scale, a.out)
        cfg = _config(a)
        if a.command == "explore":
            return cmd_explore(cfg, a.verbose)
        if a.command == "push":
            return cmd_push(cfg)
        return cmd_benchmark(cfg, a.scenarios, a.seeds, a.workers)
    except (ConfigError, ScenarioError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
