"""Classical mission planners: greedy (offline/online), particle swarm, genetic.

Offline planners decide routes on expected channels only; their plans are then
replayed through the real environment by evaluate_plan. The metaheuristics
score candidate routes with a fast slot-stepped fitness kernel that mirrors
the environment's movement/serving rules minus the inter-UAV transmit design
(which disconnected baselines do not perform).
"""

from dataclasses import dataclass, field

import numpy as np

from .accel import njit
from .channel import md_uplink_sinr
from .energy import PropulsionParams, REFERENCE_PROPULSION, flight_power, hover_power
from .mdp_env import (CorridorEnv, ConstraintReport, JointAction, RewardConfig,
                      check_constraints)
from .scenario import Scenario, rng_stream


@dataclass
class Plan:
    """Per-UAV service order and aim points; UAVs head to the end afterwards."""

    md_order: list            # list of per-UAV MD index lists
    waypoints: list           # list of per-UAV (x, y) arrays aligned with md_order
    finish_at_end: bool = True

    def covers_once(self, num_mds: int) -> bool:
        seen = [i for route in self.md_order for i in route]
        return sorted(seen) == list(range(num_mds))


@dataclass
class MissionResult:
    method: str
    energy_j: float
    time_s: float
    collected: int
    success: bool
    violations: ConstraintReport
    per_uav_energy: list
    plan_conflicts: int = 0
    seed: int = 0


class InfeasiblePlanError(RuntimeError):
    pass


# -- fitness kernel -------------------------------------------------------------


@njit(cache=True)
def _gain_sq(qx, qy, qz, ux, uy, uz, beta, kappa, c, d):
    dx = qx - ux
    dy = qy - uy
    dz = qz - uz
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    if dist <= 0.0:
        return 0.0
    theta = np.degrees(np.arcsin(dz / dist))
    p_los = 1.0 / (1.0 + c * np.exp(-d * (theta - c)))
    amp = (p_los + (1.0 - p_los) * kappa) * np.sqrt(beta) / dist
    return amp * amp


@njit(cache=True)
def _route_fitness(wp_xy, wp_md, wp_len, md_pos, start, end, z0,
                   v_fixed, tau, horizon, arrival_radius, d_min,
                   p_md, noise_md, gamma_th, beta, kappa, c, d,
                   p_fly, p_hover):
    """Simulate a decoded plan; returns (energy, slots, collected, close_pairs).

    Mirrors the environment's per-slot rules: serve the current target when
    its interference-free SINR clears the gate and the MD is unclaimed, hover
    while serving, fly toward the aim point otherwise, head to the end point
    when done. Inter-UAV transmit design is not part of offline planning.
    """
    n_uav = wp_len.shape[0]
    n_md = md_pos.shape[0]
    px = np.full(n_uav, start[0])
    py = np.full(n_uav, start[1])
    cursor = np.zeros(n_uav, dtype=np.int64)
    collected = np.zeros(n_md, dtype=np.uint8)
    serve = np.empty(n_uav, dtype=np.int64)
    energy = 0.0
    close_pairs = 0
    slots = 0
    for t in range(horizon):
        slots = t + 1
        # advance cursors past already-collected targets
        for m in range(n_uav):
            while cursor[m] < wp_len[m] and collected[wp_md[m, cursor[m]]] == 1:
                cursor[m] += 1
        # claim service, lower index first
        for m in range(n_uav):
            serve[m] = -1
        for m in range(n_uav):
            if cursor[m] >= wp_len[m]:
                continue
            tgt = wp_md[m, cursor[m]]
            taken = False
            for mo in range(m):
                if serve[mo] == tgt:
                    taken = True
            if taken:
                continue
            g2 = _gain_sq(px[m], py[m], z0, md_pos[tgt, 0], md_pos[tgt, 1],
                          md_pos[tgt, 2], beta, kappa, c, d)
            if p_md * g2 / noise_md >= gamma_th:
                serve[m] = tgt
        # realized SINR with cross interference
        for m in range(n_uav):
            if serve[m] < 0:
                continue
            tgt = serve[m]
            interference = 0.0
            for mo in range(n_uav):
                if mo == m or serve[mo] < 0:
                    continue
                interference += p_md * _gain_sq(
                    px[m], py[m], z0, md_pos[serve[mo], 0],
                    md_pos[serve[mo], 1], md_pos[serve[mo], 2],
                    beta, kappa, c, d)
            g2 = _gain_sq(px[m], py[m], z0, md_pos[tgt, 0], md_pos[tgt, 1],
                          md_pos[tgt, 2], beta, kappa, c, d)
            if p_md * g2 / (interference + noise_md) >= gamma_th:
                collected[tgt] = 1
        # movement and energy
        for m in range(n_uav):
            if serve[m] >= 0:
                energy += p_hover * tau
                continue
            if cursor[m] < wp_len[m]:
                tx = wp_xy[m, cursor[m], 0]
                ty = wp_xy[m, cursor[m], 1]
                arrived = False
            else:
                tx = end[0]
                ty = end[1]
                arrived = (np.sqrt((px[m] - tx) ** 2 + (py[m] - ty) ** 2)
                           <= arrival_radius)
            if arrived:
                energy += p_hover * tau
                continue
            dx = tx - px[m]
            dy = ty - py[m]
            norm = np.sqrt(dx * dx + dy * dy)
            if norm < 1e-9:
                energy += p_hover * tau
                continue
            px[m] += v_fixed * tau * dx / norm
            py[m] += v_fixed * tau * dy / norm
            energy += p_fly * tau
        # pairwise proximity outside the shared pads
        for a in range(n_uav):
            for b in range(a + 1, n_uav):
                dd = np.sqrt((px[a] - px[b]) ** 2 + (py[a] - py[b]) ** 2)
                if dd < d_min:
                    near_pad = False
                    for sx, sy in ((start[0], start[1]), (end[0], end[1])):
                        ra = np.sqrt((px[a] - sx) ** 2 + (py[a] - sy) ** 2)
                        rb = np.sqrt((px[b] - sx) ** 2 + (py[b] - sy) ** 2)
                        if ra <= arrival_radius and rb <= arrival_radius:
                            near_pad = True
                    if not near_pad:
                        close_pairs += 1
        # termination
        if collected.sum() == n_md:
            done = True
            for m in range(n_uav):
                if np.sqrt((px[m] - end[0]) ** 2 + (py[m] - end[1]) ** 2) \
                        > arrival_radius:
                    done = False
            if done:
                break
    return energy, slots, int(collected.sum()), close_pairs


def _pack_plan(plan: Plan, scenario: Scenario):
    m_count = scenario.config.num_uavs
    max_len = max((len(r) for r in plan.md_order), default=0)
    max_len = max(max_len, 1)
    wp_xy = np.zeros((m_count, max_len, 2))
    wp_md = np.zeros((m_count, max_len), dtype=np.int64)
    wp_len = np.array([len(r) for r in plan.md_order], dtype=np.int64)
    for m, (route, points) in enumerate(zip(plan.md_order, plan.waypoints)):
        for k, (i, xy) in enumerate(zip(route, points)):
            wp_md[m, k] = i
            wp_xy[m, k] = xy
    return wp_xy, wp_md, wp_len


def plan_fitness(plan: Plan, scenario: Scenario,
                 propulsion: PropulsionParams = REFERENCE_PROPULSION):
    """(fitness, energy, slots, collected): energy plus coverage/safety penalties."""
    cfg = scenario.config
    wp_xy, wp_md, wp_len = _pack_plan(plan, scenario)
    energy, slots, collected, close = _route_fitness(
        wp_xy, wp_md, wp_len, scenario.md_positions,
        np.asarray(cfg.start, float), np.asarray(cfg.end, float), cfg.altitude,
        cfg.v_fixed, cfg.slot_seconds, cfg.horizon_slots, cfg.arrival_radius,
        cfg.d_min, cfg.p_md, cfg.noise_md, cfg.gamma_th_md, cfg.beta_ref,
        cfg.kappa_nlos, cfg.los_c, cfg.los_d,
        flight_power(cfg.v_fixed, propulsion), hover_power(propulsion))
    missing = cfg.num_mds - collected
    fitness = energy + 1e5 * missing + 1e3 * close
    return fitness, energy, slots, collected


# -- greedy planners ------------------------------------------------------------


def greedy_offline(scenario: Scenario) -> Plan:
    """Cheapest-insertion partition, then nearest-neighbour service order."""
    cfg = scenario.config
    md = scenario.md_positions[:, :2]
    start = np.asarray(cfg.start, float)
    end = np.asarray(cfg.end, float)
    routes = [[start, end] for _ in range(cfg.num_uavs)]
    owner: list = [[] for _ in range(cfg.num_uavs)]

    remaining = set(range(cfg.num_mds))
    while remaining:
        best = None
        for i in remaining:
            for m in range(cfg.num_uavs):
                r = routes[m]
                for k in range(len(r) - 1):
                    extra = (np.linalg.norm(r[k] - md[i])
                             + np.linalg.norm(md[i] - r[k + 1])
                             - np.linalg.norm(r[k] - r[k + 1]))
                    if best is None or extra < best[0]:
                        best = (extra, i, m, k)
        _, i, m, k = best
        routes[m].insert(k + 1, md[i])
        owner[m].append(i)
        remaining.discard(i)

    md_order = []
    waypoints = []
    total_length = 0.0
    for m in range(cfg.num_uavs):
        order = []
        pos = start
        left = list(owner[m])
        while left:
            nxt = min(left, key=lambda i: np.linalg.norm(pos - md[i]))
            order.append(nxt)
            total_length += float(np.linalg.norm(pos - md[nxt]))
            pos = md[nxt]
            left.remove(nxt)
        total_length += float(np.linalg.norm(pos - end))
        md_order.append(order)
        waypoints.append([md[i].copy() for i in order])

    per_uav_budget = cfg.horizon_slots * cfg.slot_seconds * cfg.v_fixed
    if total_length > cfg.num_uavs * per_uav_budget:
        raise InfeasiblePlanError(
            f"route length {total_length:.0f} m exceeds the mission horizon")
    return Plan(md_order=md_order, waypoints=waypoints)


def _controller_step(env: CorridorEnv, targets, aim_points):
    """Serve-or-fly action under the environment's own masks.

    ``targets[m]`` is the MD index the UAV wants next (or -1), ``aim_points[m]``
    the (x, y) it flies toward. Serve claims that would fail under the slot's
    actual cross interference are backed off junior-first (the UAV closes in
    instead), which prevents two hovering UAVs from jamming each other
    indefinitely. Returns the action and the count of claim conflicts.
    """
    cfg = env.cfg
    m_agents = env.n_agents
    md = np.full(m_agents, -1, dtype=int)
    heading = np.zeros(m_agents)
    speed = np.zeros(m_agents, dtype=np.uint8)
    conflicts = 0
    claimed = []
    for m in range(m_agents):
        mask = env.action_mask(m, claimed)
        tgt = targets[m]
        if tgt >= 0 and mask[tgt]:
            md[m] = tgt
        elif tgt >= 0 and env.state.collected[tgt] == 0 and tgt in claimed:
            conflicts += 1
        claimed.append(int(md[m]))

    # interference backoff: drop failing claims, junior first
    while np.any(md >= 0):
        rep = md_uplink_sinr(env.state.positions, env.scenario.md_positions,
                             md, cfg.p_md, cfg.noise_md, cfg.beta_ref,
                             cfg.kappa_nlos, cfg.los_c, cfg.los_d)
        failing = [m for m in range(m_agents)
                   if md[m] >= 0 and rep.sinr[m, md[m]] < cfg.gamma_th_md]
        if not failing:
            break
        md[failing[-1]] = -1

    for m in range(m_agents):
        if md[m] < 0:
            pos = env.state.positions[m]
            delta = np.asarray(aim_points[m], float) - pos[:2]
            dist = np.linalg.norm(delta)
            if dist > 1e-9:
                heading[m] = np.arctan2(delta[1], delta[0])
                stop = cfg.arrival_radius if targets[m] < 0 else 0.0
                if dist > stop:
                    speed[m] = 1
    return JointAction(md_choice=md, heading=heading, speed=speed), conflicts


def evaluate_plan(plan: Plan, scenario: Scenario, seed: int = 0,
                  method: str = "plan", connected: bool = False,
                  propulsion: PropulsionParams = REFERENCE_PROPULSION,
                  reward: RewardConfig = RewardConfig()) -> MissionResult:
    """Replay a plan through the environment and audit the episode."""
    cfg = scenario.config
    assigns_any = any(len(r) > 0 for r in plan.md_order)
    if assigns_any and not plan.covers_once(cfg.num_mds):
        raise InfeasiblePlanError("plan does not assign every MD exactly once")
    env = CorridorEnv(scenario, reward=reward, propulsion=propulsion,
                      record=True, connected=connected)
    env.reset(seed)
    cursors = [0] * env.n_agents
    conflicts = 0
    done = False
    info = {"success": False}
    state = env.state
    while not done:
        targets = []
        aims = []
        for m in range(env.n_agents):
            route = plan.md_order[m] if m < len(plan.md_order) else []
            while cursors[m] < len(route) and env.state.collected[route[cursors[m]]]:
                cursors[m] += 1
            if cursors[m] < len(route):
                tgt = route[cursors[m]]
                targets.append(tgt)
                aims.append(plan.waypoints[m][cursors[m]])
            else:
                targets.append(-1)
                if plan.finish_at_end:
                    aims.append(np.asarray(cfg.end, float))
                else:
                    aims.append(env.state.positions[m][:2])
        action, c = _controller_step(env, targets, aims)
        conflicts += c
        state, _, _, done, info = env.step(action)
    violations = check_constraints(env.trace, scenario, connected=connected)
    return MissionResult(
        method=method, energy_j=state.cumulative_energy,
        time_s=state.slot * cfg.slot_seconds, collected=int(state.collected.sum()),
        success=bool(info["success"]), violations=violations,
        per_uav_energy=state.energy_per_uav.tolist(),
        plan_conflicts=conflicts, seed=seed)


def greedy_online(scenario: Scenario, seed: int = 0,
                  propulsion: PropulsionParams = REFERENCE_PROPULSION,
                  reward: RewardConfig = RewardConfig()) -> MissionResult:
    """Nearest-unvisited pursuit on the live shared collection status.

    Connected baseline: the per-slot transmit design runs on every chain link
    and its outcome is logged, but movement decisions stay greedy.
    """
    cfg = scenario.config
    env = CorridorEnv(scenario, reward=reward, propulsion=propulsion,
                      record=True)
    env.reset(seed)
    md = scenario.md_positions[:, :2]
    done = False
    info = {"success": False}
    state = env.state
    while not done:
        targets = []
        aims = []
        chosen = set()
        for m in range(env.n_agents):
            pos = env.state.positions[m][:2]
            candidates = [i for i in range(cfg.num_mds)
                          if not env.state.collected[i] and i not in chosen]
            if candidates:
                tgt = min(candidates, key=lambda i: np.linalg.norm(pos - md[i]))
                chosen.add(tgt)
                targets.append(tgt)
                aims.append(md[tgt])
            else:
                targets.append(-1)
                aims.append(np.asarray(cfg.end, float))
        action, _ = _controller_step(env, targets, aims)
        state, _, _, done, info = env.step(action)
    violations = check_constraints(env.trace, scenario, connected=True)
    return MissionResult(
        method="greedy_online", energy_j=state.cumulative_energy,
        time_s=state.slot * cfg.slot_seconds,
        collected=int(state.collected.sum()), success=bool(info["success"]),
        violations=violations, per_uav_energy=state.energy_per_uav.tolist(),
        seed=seed)


# -- metaheuristics -------------------------------------------------------------


@dataclass(frozen=True)
class PsoConfig:
    swarm: int = 60
    iterations: int = 300
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    waypoint_span: float = 60.0
    seed: int = 0


@dataclass(frozen=True)
class GaConfig:
    population: int = 80
    generations: int = 400
    crossover: float = 0.9
    mutation: float = 0.1
    seed: int = 0


def _decode_keys(order_keys, assign_keys, offsets, scenario: Scenario) -> Plan:
    cfg = scenario.config
    m_count = cfg.num_uavs
    uav_of = np.minimum(np.floor(np.clip(assign_keys, 0.0, m_count)),
                        m_count - 1).astype(int)
    md_order = []
    waypoints = []
    for m in range(m_count):
        mine = np.flatnonzero(uav_of == m)
        mine = mine[np.argsort(order_keys[mine], kind="stable")]
        md_order.append([int(i) for i in mine])
        pts = []
        for i in mine:
            xy = scenario.md_positions[i, :2] + offsets[i]
            pts.append(np.clip(xy, [0.0, 0.0],
                               [cfg.area_width, cfg.area_height]))
        waypoints.append(pts)
    return Plan(md_order=md_order, waypoints=waypoints)


def pso_plan(scenario: Scenario, hyper: PsoConfig = PsoConfig()) -> Plan:
    """Random-key particle swarm over assignment, order and aim offsets."""
    cfg = scenario.config
    n = cfg.num_mds
    dim = 2 * n + 2 * n  # order keys, assignment keys, 2-d offsets
    rng = rng_stream(hyper.seed, "pso")
    lo = np.concatenate([np.full(n, -1.0), np.zeros(n),
                         np.full(2 * n, -hyper.waypoint_span)])
    hi = np.concatenate([np.full(n, 1.0), np.full(n, float(cfg.num_uavs)),
                         np.full(2 * n, hyper.waypoint_span)])
    pos = rng.uniform(lo, hi, size=(hyper.swarm, dim))
    vel = np.zeros_like(pos)

    def decode(x) -> Plan:
        return _decode_keys(x[:n], x[n:2 * n], x[2 * n:].reshape(n, 2), scenario)

    def score(x) -> float:
        return plan_fitness(decode(x), scenario)[0]

    fitness = np.array([score(x) for x in pos])
    pbest = pos.copy()
    pbest_fit = fitness.copy()
    g = int(np.argmin(fitness))
    gbest = pos[g].copy()
    gbest_fit = float(fitness[g])

    for _ in range(hyper.iterations):
        r1 = rng.random((hyper.swarm, dim))
        r2 = rng.random((hyper.swarm, dim))
        vel = (hyper.inertia * vel
               + hyper.cognitive * r1 * (pbest - pos)
               + hyper.social * r2 * (gbest[None, :] - pos))
        pos = np.clip(pos + vel, lo, hi)
        fitness = np.array([score(x) for x in pos])
        improved = fitness < pbest_fit
        pbest[improved] = pos[improved]
        pbest_fit[improved] = fitness[improved]
        g = int(np.argmin(pbest_fit))
        if pbest_fit[g] < gbest_fit:
            gbest = pbest[g].copy()
            gbest_fit = float(pbest_fit[g])
    return decode(gbest)


def _order_crossover(rng, pa, pb):
    n = len(pa)
    a, b = sorted(rng.integers(0, n, size=2))
    child = -np.ones(n, dtype=int)
    child[a:b + 1] = pa[a:b + 1]
    fill = [x for x in pb if x not in set(child[a:b + 1])]
    k = 0
    for i in range(n):
        if child[i] < 0:
            child[i] = fill[k]
            k += 1
    return child


def _split_decode(perm, splits, scenario: Scenario) -> Plan:
    bounds = [0] + sorted(int(s) for s in splits) + [len(perm)]
    md_order = []
    waypoints = []
    for m in range(scenario.config.num_uavs):
        seg = [int(i) for i in perm[bounds[m]:bounds[m + 1]]]
        md_order.append(seg)
        waypoints.append([scenario.md_positions[i, :2].copy() for i in seg])
    return Plan(md_order=md_order, waypoints=waypoints)


def ga_plan(scenario: Scenario, hyper: GaConfig = GaConfig()) -> Plan:
    """Permutation-with-split genetic search: order crossover, swap mutation."""
    cfg = scenario.config
    n = cfg.num_mds
    m_count = cfg.num_uavs
    rng = rng_stream(hyper.seed, "ga")

    def random_individual():
        return (rng.permutation(n),
                rng.integers(0, n + 1, size=m_count - 1))

    def score(ind) -> float:
        return plan_fitness(_split_decode(*ind, scenario), scenario)[0]

    pop = [random_individual() for _ in range(hyper.population)]
    fit = np.array([score(ind) for ind in pop])

    for _ in range(hyper.generations):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[0]]
        elite_fit = float(fit[order[0]])
        next_pop = [(elite[0].copy(), elite[1].copy())]
        while len(next_pop) < hyper.population:
            # binary tournament selection
            picks = rng.integers(0, hyper.population, size=4)
            pa = pop[picks[0]] if fit[picks[0]] <= fit[picks[1]] else pop[picks[1]]
            pb = pop[picks[2]] if fit[picks[2]] <= fit[picks[3]] else pop[picks[3]]
            if n >= 2 and rng.random() < hyper.crossover:
                perm = _order_crossover(rng, pa[0], pb[0])
            else:
                perm = pa[0].copy()
            splits = (pa[1] if rng.random() < 0.5 else pb[1]).copy()
            if n >= 2 and rng.random() < hyper.mutation:
                i, j = rng.integers(0, n, size=2)
                perm[i], perm[j] = perm[j], perm[i]
            if m_count > 1 and rng.random() < hyper.mutation:
                splits[rng.integers(0, m_count - 1)] = rng.integers(0, n + 1)
            next_pop.append((perm, splits))
        pop = next_pop
        fit = np.array([score(ind) for ind in pop])
        # elitism guarantee: the carried-over champion keeps its score
        if float(fit[0]) > elite_fit + 1e-9:
            pop[0] = elite
            fit[0] = elite_fit
    best = int(np.argmin(fit))
    return _split_decode(*pop[best], scenario)
