import json
import os
import subprocess
import sys

import numpy as np

from uavisac import accel
from uavisac.channel import effective_channel, sample_rician_channel
from uavisac.isac_sdr import solve_feasibility
from uavisac.planners import greedy_offline, plan_fitness
from uavisac.scenario import ScenarioConfig, build_scenario, rng_stream

WORKER = r"""
import json, sys
import numpy as np
from uavisac import accel
from uavisac.channel import effective_channel, sample_rician_channel
from uavisac.isac_sdr import solve_feasibility
from uavisac.planners import greedy_offline, plan_fitness
from uavisac.scenario import ScenarioConfig, build_scenario, rng_stream

cfg = ScenarioConfig()
sc = build_scenario(cfg)
rng = rng_stream(0, "accel-test")
h = sample_rician_channel((0, 0, 80), (400, 0, 80), cfg.rician_k,
                          cfg.beta_ref, cfg.n_antennas, rng)
des = solve_feasibility(effective_channel(h, sc.rx_combiner), cfg.noise_uav,
                        cfg.gamma_th_uav, cfg.tbp_threshold,
                        cfg.sensing_angles, cfg.p_max)
fit = plan_fitness(greedy_offline(sc), sc)
print(json.dumps({"numba_disabled": accel.NUMBA_DISABLED,
                  "status": des.solver_status, "margin": des.margin,
                  "fitness": fit[0], "energy": fit[1], "slots": fit[2]}))
"""


def run_lane(disabled: bool) -> dict:
    env = dict(os.environ, UAVISAC_DISABLE_NUMBA="1" if disabled else "0")
    out = subprocess.run([sys.executable, "-c", WORKER], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_default_lane_uses_numba():
    assert not accel.NUMBA_DISABLED


def test_njit_decorator_fallback_is_identity():
    calls = []

    def probe(x):
        calls.append(x)
        return x + 1

    jitted = accel.njit(cache=True)(probe)
    assert jitted is probe or hasattr(jitted, "py_func")


def test_fallback_lane_matches_numba_lane():
    jit = run_lane(False)
    plain = run_lane(True)
    assert jit["numba_disabled"] is False
    assert plain["numba_disabled"] is True
    assert jit["status"] == plain["status"]
    assert np.isclose(jit["margin"], plain["margin"], rtol=1e-9, atol=1e-12)
    assert jit["slots"] == plain["slots"]
    assert np.isclose(jit["fitness"], plain["fitness"], rtol=1e-9)
