"""Experiment runner: mission grids over methods, sweep axes and seeds.

Every cell (method, axis value, seed) yields one persisted MissionResult row;
aggregation only ever reads those rows back, so each emitted number traces to
per-seed provenance. Re-running an emit step on persisted results is
idempotent, and single-worker runs are byte-deterministic.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .drl_mappo import MappoPolicy, run_policy_episode, train
from .mdp_env import CorridorEnv, check_constraints
from .planners import (MissionResult, evaluate_plan, ga_plan, greedy_offline,
                       greedy_online, pso_plan)
from .scenario import (ScenarioConfig, build_scenario, db_to_linear,
                       scenario_fingerprint)

METHODS = ("drl_sdr", "greedy_online", "greedy_offline", "pso", "ga", "drl_sc")
AXES = ("uav_count", "md_count", "sinr_threshold")
CIRCUIT_POWER_W = 2.0   # extra draw of the split-array variant, per UAV

RESULT_FIELDS = [
    "method", "axis", "value", "seed", "energy_j", "time_s", "collected",
    "success", "v_md_exclusivity", "v_coverage_missing", "v_power", "v_psd",
    "v_tbp", "v_min_distance", "v_uplink_gating", "v_inter_uav",
    "plan_conflicts",
]


@dataclass(frozen=True)
class ExperimentSpec:
    run_config: RunConfig
    methods: tuple
    axis: str = "uav_count"
    values: tuple = (1, 2, 3, 4, 5)
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "results"
    train_first: bool = False
    train_episodes: int | None = None
    workers: int = 1


def validate_spec(spec: ExperimentSpec) -> list:
    problems = []
    if not spec.methods:
        problems.append("method list must not be empty")
    for m in spec.methods:
        if m not in METHODS:
            problems.append(f"unknown method {m!r}")
    if spec.axis not in AXES:
        problems.append(f"unknown sweep axis {spec.axis!r}")
    if not spec.values:
        problems.append("sweep value list must not be empty")
    elif spec.axis in ("uav_count", "md_count"):
        bad = [v for v in spec.values if int(v) != v or v < 1]
        if bad:
            problems.append(f"{spec.axis} values must be positive integers, got {bad}")
    if not spec.seeds:
        problems.append("seed list must not be empty")
    return problems


def scenario_config_for(run_config: RunConfig, axis: str, value) -> ScenarioConfig:
    """Axis value applied to the base scenario; sinr_threshold is given in dB."""
    cfg = run_config.scenario
    if axis == "uav_count":
        return replace(cfg, num_uavs=int(value))
    if axis == "md_count":
        return replace(cfg, num_mds=int(value))
    if axis == "sinr_threshold":
        return replace(cfg, gamma_th_uav=db_to_linear(float(value)))
    raise ValueError(f"unknown axis {axis!r}")


def checkpoint_path(out_dir, axis, value) -> Path:
    return Path(out_dir) / "checkpoints" / f"mappo_{axis}_{value}.npz"


def train_checkpoint(spec: ExperimentSpec, value) -> Path:
    """Train the shared MAPPO policy for one axis value and persist it."""
    rc = spec.run_config
    scenario = build_scenario(scenario_config_for(rc, spec.axis, value))
    mappo = rc.mappo
    if spec.train_episodes is not None:
        mappo = replace(mappo, max_episodes=spec.train_episodes)
    policy, curve = train(scenario, mappo, rc.reward)
    path = checkpoint_path(spec.out_dir, spec.axis, value)
    path.parent.mkdir(parents=True, exist_ok=True)
    policy.save(path)
    curve.write_csv(path.with_suffix(".curve.csv"))
    return path


def _policy_mission(policy, scenario, seed, run_config: RunConfig,
                    method: str, link_mode: str) -> MissionResult:
    env = CorridorEnv(scenario, reward=run_config.reward,
                      propulsion=run_config.propulsion, record=True,
                      link_mode=link_mode)
    success, slots, energy, collected = run_policy_episode(
        policy, env, seed, deterministic=True)
    violations = check_constraints(env.trace, scenario, connected=True)
    if method == "drl_sc":
        energy += CIRCUIT_POWER_W * scenario.config.num_uavs \
            * slots * scenario.config.slot_seconds
    return MissionResult(
        method=method, energy_j=energy,
        time_s=slots * scenario.config.slot_seconds, collected=collected,
        success=success, violations=violations,
        per_uav_energy=env.state.energy_per_uav.tolist(), seed=seed)


def run_cell(method: str, spec: ExperimentSpec, value, seed) -> MissionResult:
    rc = spec.run_config
    scenario = build_scenario(scenario_config_for(rc, spec.axis, value))
    if method == "greedy_offline":
        plan = greedy_offline(scenario)
        return evaluate_plan(plan, scenario, seed=seed, method=method,
                             connected=False, propulsion=rc.propulsion,
                             reward=rc.reward)
    if method == "pso":
        plan = pso_plan(scenario, replace(rc.pso, seed=seed))
        return evaluate_plan(plan, scenario, seed=seed, method=method,
                             connected=False, propulsion=rc.propulsion,
                             reward=rc.reward)
    if method == "ga":
        plan = ga_plan(scenario, replace(rc.ga, seed=seed))
        return evaluate_plan(plan, scenario, seed=seed, method=method,
                             connected=False, propulsion=rc.propulsion,
                             reward=rc.reward)
    if method == "greedy_online":
        return greedy_online(scenario, seed=seed, propulsion=rc.propulsion,
                             reward=rc.reward)
    if method in ("drl_sdr", "drl_sc"):
        path = checkpoint_path(spec.out_dir, spec.axis, value)
        if not path.exists():
            raise FileNotFoundError(
                f"method {method!r} needs a trained checkpoint at {path}; "
                "run with train_first or train explicitly")
        policy = MappoPolicy.load(path)
        mode = "separated" if method == "drl_sc" else "isac"
        return _policy_mission(policy, scenario, seed, rc, method, mode)
    raise ValueError(f"unknown method {method!r}")


def _result_row(res: MissionResult, axis, value) -> dict:
    v = res.violations
    return {
        "method": res.method, "axis": axis, "value": value, "seed": res.seed,
        "energy_j": f"{res.energy_j:.6f}", "time_s": f"{res.time_s:.3f}",
        "collected": res.collected, "success": int(res.success),
        "v_md_exclusivity": v.md_exclusivity,
        "v_coverage_missing": v.coverage_missing,
        "v_power": v.power_budget, "v_psd": v.psd, "v_tbp": v.tbp,
        "v_min_distance": v.min_distance, "v_uplink_gating": v.uplink_gating,
        "v_inter_uav": "na" if v.inter_uav_sinr is None else v.inter_uav_sinr,
        "plan_conflicts": res.plan_conflicts,
    }


def _cell_task(args):
    method, spec, value, seed = args
    res = run_cell(method, spec, value, seed)
    return _result_row(res, spec.axis, value)


def run_experiment(spec: ExperimentSpec) -> list:
    """Run the grid, persist results.csv/aggregates.csv/manifest.json."""
    problems = validate_spec(spec)
    if problems:
        raise ValueError("invalid experiment spec: " + "; ".join(problems))
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    needs_policy = [m for m in spec.methods if m in ("drl_sdr", "drl_sc")]
    if needs_policy:
        for value in spec.values:
            path = checkpoint_path(spec.out_dir, spec.axis, value)
            if not path.exists():
                if not spec.train_first:
                    raise FileNotFoundError(
                        f"missing checkpoint for {needs_policy[0]!r} at {path}")
                train_checkpoint(spec, value)

    tasks = [(m, spec, v, s) for m in spec.methods
             for v in spec.values for s in spec.seeds]
    if spec.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_cell_task, tasks))
    else:
        rows = [_cell_task(t) for t in tasks]
    rows.sort(key=lambda r: (r["method"], spec.values.index(r["value"]),
                             r["seed"]))

    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    _write_aggregates(rows, out / "aggregates.csv")
    _write_manifest(spec, out / "manifest.json")
    return rows


def _write_aggregates(rows, path):
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["value"]), []).append(r)
    lines = ["method,axis,value,n_seeds,mean_energy_j,mean_time_s,"
             "success_rate,mean_collected"]
    for (method, value), group in sorted(
            groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        energy = np.mean([float(g["energy_j"]) for g in group])
        time_s = np.mean([float(g["time_s"]) for g in group])
        succ = np.mean([int(g["success"]) for g in group])
        coll = np.mean([int(g["collected"]) for g in group])
        lines.append(f"{method},{group[0]['axis']},{value},{len(group)},"
                     f"{energy:.6f},{time_s:.3f},{succ:.3f},{coll:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_manifest(spec: ExperimentSpec, path):
    base = build_scenario(spec.run_config.scenario)
    manifest = {
        "package_version": __version__,
        "methods": list(spec.methods),
        "axis": spec.axis,
        "values": list(spec.values),
        "seeds": list(spec.seeds),
        "train_episodes": spec.train_episodes,
        "scenario_fingerprint": scenario_fingerprint(base),
        "config": _jsonable(spec.run_config),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_results(out_dir) -> list:
    with open(Path(out_dir) / "results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def emit_comparison_table(out_dir) -> Path:
    """Methods x {energy, time} against UAV counts, plus a minima sidecar."""
    rows = [r for r in read_results(out_dir) if r["axis"] == "uav_count"]
    if not rows:
        raise ValueError("no uav_count results found to tabulate")
    values = sorted({r["value"] for r in rows}, key=float)
    methods = sorted({r["method"] for r in rows})

    def mean_of(method, value, field):
        cell = [float(r[field]) for r in rows
                if r["method"] == method and r["value"] == value]
        return np.mean(cell) if cell else None

    lines = ["method,metric," + ",".join(f"uav_{v}" for v in values)]
    marks = ["metric,uav_count,best_method"]
    for metric, field, scale in (("energy_1e5_j", "energy_j", 1e-5),
                                 ("total_time_s", "time_s", 1.0)):
        for method in methods:
            cells = []
            for v in values:
                mean = mean_of(method, v, field)
                cells.append("" if mean is None else f"{mean * scale:.4f}")
            lines.append(f"{method},{metric}," + ",".join(cells))
        for v in values:
            candidates = [(mean_of(m, v, field), m) for m in methods
                          if mean_of(m, v, field) is not None]
            if candidates:
                best = min(candidates)[1]
                marks.append(f"{metric},{v},{best}")
    table_path = Path(out_dir) / "comparison_table.csv"
    table_path.write_text("\n".join(lines) + "\n")
    (Path(out_dir) / "comparison_table_minima.csv").write_text(
        "\n".join(marks) + "\n")
    return table_path


def emit_sweep_data(out_dir, axis) -> Path:
    """Long-format mean energy per (value, method) plus percentage reductions
    of the proposed method against every baseline."""
    rows = [r for r in read_results(out_dir) if r["axis"] == axis]
    if not rows:
        raise ValueError(f"no {axis} results found")
    values = sorted({r["value"] for r in rows}, key=float)
    methods = sorted({r["method"] for r in rows})
    means: dict = {}
    lines = ["value,method,mean_energy_j"]
    for v in values:
        for m in methods:
            cell = [float(r["energy_j"]) for r in rows
                    if r["method"] == m and r["value"] == v]
            if cell:
                means[(v, m)] = float(np.mean(cell))
                lines.append(f"{v},{m},{means[(v, m)]:.6f}")
    sweep_path = Path(out_dir) / f"sweep_{axis}.csv"
    sweep_path.write_text("\n".join(lines) + "\n")

    red = ["value,baseline,reduction_pct"]
    for v in values:
        ours = means.get((v, "drl_sdr"))
        if ours is None:
            continue
        for m in methods:
            if m == "drl_sdr" or (v, m) not in means:
                continue
            base = means[(v, m)]
            pct = 100.0 * (base - ours) / base if base > 0 else 0.0
            red.append(f"{v},{m},{pct:.4f}")
    (Path(out_dir) / f"sweep_{axis}_reductions.csv").write_text(
        "\n".join(red) + "\n")
    return sweep_path
