#!/usr/bin/env python3
"""Benchmark the hot kernels with and without numba.

Runs each lane in a subprocess (the lane is chosen at import time via
UAVISAC_DISABLE_NUMBA) and reports per-call times for the transmit-design
solver and the planner route-fitness kernel.

Usage: python benchmarks/bench_sdr.py [--solves N] [--fitness N]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, os, sys, time
import numpy as np
from uavisac.scenario import ScenarioConfig, build_scenario, rng_stream
from uavisac.channel import effective_channel, sample_rician_channel
from uavisac.isac_sdr import SdrOptions, solve_feasibility
from uavisac.planners import greedy_offline, plan_fitness

n_solves, n_fitness = int(sys.argv[1]), int(sys.argv[2])
cfg = ScenarioConfig()
sc = build_scenario(cfg)
rng = rng_stream(0, "bench")

# mix of beampattern-bound, SINR-bound and infeasible instances
cases = []
for k in range(n_solves):
    d = 100.0 + (k % 16) * 150.0
    h = sample_rician_channel((0, 0, 80), (d, 0, 80), cfg.rician_k,
                              cfg.beta_ref, cfg.n_antennas, rng)
    cases.append(effective_channel(h, sc.rx_combiner))

opts = SdrOptions()
solve_feasibility(cases[0], cfg.noise_uav, cfg.gamma_th_uav,
                  cfg.tbp_threshold, cfg.sensing_angles, cfg.p_max, opts)  # warm up
t0 = time.perf_counter()
feasible = 0
for h_eff in cases:
    des = solve_feasibility(h_eff, cfg.noise_uav, cfg.gamma_th_uav,
                            cfg.tbp_threshold, cfg.sensing_angles,
                            cfg.p_max, opts)
    feasible += des.feasible
solve_s = time.perf_counter() - t0

plan = greedy_offline(sc)
plan_fitness(plan, sc)  # warm up
t0 = time.perf_counter()
for _ in range(n_fitness):
    plan_fitness(plan, sc)
fit_s = time.perf_counter() - t0

print(json.dumps({
    "numba_disabled": os.environ.get("UAVISAC_DISABLE_NUMBA", "0"),
    "solves": n_solves, "feasible": feasible,
    "solve_ms_per_call": 1e3 * solve_s / n_solves,
    "fitness": n_fitness,
    "fitness_ms_per_call": 1e3 * fit_s / n_fitness,
}))
"""


def run_lane(disabled: bool, n_solves: int, n_fitness: int) -> dict:
    env = dict(os.environ, UAVISAC_DISABLE_NUMBA="1" if disabled else "0")
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(n_solves), str(n_fitness)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--solves", type=int, default=64)
    parser.add_argument("--fitness", type=int, default=200)
    args = parser.parse_args()

    jit = run_lane(False, args.solves, args.fitness)
    plain = run_lane(True, args.solves, args.fitness)
    assert jit["feasible"] == plain["feasible"], "lanes disagree on decisions"

    print(f"{'kernel':<28}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for label, key in (("transmit design solve", "solve_ms_per_call"),
                       ("route fitness eval", "fitness_ms_per_call")):
        ratio = plain[key] / jit[key] if jit[key] > 0 else float("inf")
        print(f"{label:<28}{jit[key]:>10.3f}ms{plain[key]:>10.3f}ms"
              f"{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
