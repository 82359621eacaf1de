"""Slot-stepped multi-UAV data-collection environment.

Per slot, each UAV picks a monitoring device (or none), a heading and a
binary speed; collection succeeds when the scheduled uplink clears the SINR
threshold under the slot's interference. The shared reward combines
collection progress, the per-link ISAC feasibility outcome, an energy
penalty and a safe-distance penalty.

Safe-distance handling: intended moves that would end a non-exempt pair
closer than d_min (or shrink an already-close pair) are replaced by hover,
junior (higher) UAV index first. Pairs jointly parked at the start or end
station are exempt, since the shared launch/landing pads make co-location
unavoidable there.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import md_gain_matrix, md_uplink_sinr
from .energy import PropulsionParams, REFERENCE_PROPULSION, slot_energy
from .isac_sdr import (SdrOptions, link_feasibility_sweep,
                       separated_link_sweep, verify_design)
from .scenario import Scenario, rng_stream


@dataclass(frozen=True)
class RewardConfig:
    # link_pass must not outrun the per-slot energy penalty or parked fleets
    # farm the QoS reward instead of finishing the mission
    collect: float = 10.0
    link_pass: float = 0.0
    link_fail: float = -1.0
    energy_scale: float = 1e4
    distance_penalty: float = -5.0
    arrival_bonus: float = 50.0
    # potential-based shaping (optimal-policy invariant): progress toward
    # uncollected devices and, once done, toward the landing pad; collection
    # events alone are too sparse to train navigation from a corner start
    shaping_md: float = 0.01      # reward per metre of closing device distance
    shaping_end: float = 0.002    # reward per metre of closing landing distance


@dataclass
class RewardBreakdown:
    collection: float = 0.0
    qos: float = 0.0
    energy: float = 0.0
    distance: float = 0.0
    bonus: float = 0.0
    shaping: float = 0.0

    @property
    def total(self) -> float:
        return (self.collection + self.qos + self.energy + self.distance
                + self.bonus + self.shaping)


@dataclass
class FleetState:
    slot: int
    positions: np.ndarray          # (M, 3)
    headings: np.ndarray           # (M,)
    residual_energy: np.ndarray    # (M,)
    collected: np.ndarray          # (I,) uint8
    energy_per_uav: np.ndarray     # (M,) cumulative J
    flying: np.ndarray             # (M,) uint8, last slot's effective motion

    @property
    def cumulative_energy(self) -> float:
        return float(self.energy_per_uav.sum())

    def copy(self) -> "FleetState":
        return FleetState(self.slot, self.positions.copy(), self.headings.copy(),
                          self.residual_energy.copy(), self.collected.copy(),
                          self.energy_per_uav.copy(), self.flying.copy())


@dataclass(frozen=True)
class JointAction:
    md_choice: np.ndarray   # (M,) int, -1 for no MD
    heading: np.ndarray     # (M,) radians
    speed: np.ndarray       # (M,) uint8, 0 hover / 1 fly at v_fixed

    @classmethod
    def hover(cls, m: int) -> "JointAction":
        return cls(md_choice=np.full(m, -1), heading=np.zeros(m),
                   speed=np.zeros(m, dtype=np.uint8))


@dataclass
class SlotRecord:
    """One slot of the episode trace, enough to re-audit every constraint."""

    slot: int
    positions: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    served: np.ndarray
    served_sinr: np.ndarray
    collected_after: np.ndarray
    reward: RewardBreakdown
    link_designs: list
    link_margins: np.ndarray
    overrides: np.ndarray
    energy: float


class CorridorEnv:
    """Single-owner, sequentially stepped; spawn one instance per worker."""

    def __init__(self, scenario: Scenario, reward: RewardConfig = RewardConfig(),
                 propulsion: PropulsionParams = REFERENCE_PROPULSION,
                 sdr_opts: SdrOptions = SdrOptions(certify_only=True, gap_tol=1e-5),
                 sdr_cache: dict | None = None, record: bool = False,
                 connected: bool = True, link_mode: str = "isac"):
        if link_mode not in ("isac", "separated"):
            raise ValueError(f"unknown link mode {link_mode!r}")
        self.scenario = scenario
        self.cfg = scenario.config
        self.reward_cfg = reward
        self.propulsion = propulsion
        self.sdr_opts = sdr_opts
        self.sdr_cache = sdr_cache
        self.record = record
        self.connected = connected
        self.link_mode = link_mode
        self.n_agents = self.cfg.num_uavs
        self.n_mds = self.cfg.num_mds
        self.n_actions = self.n_mds + 1          # MD indices plus no-op
        self.obs_dim = 8 + 4 * self.n_mds + 3 * (self.n_agents - 1) + self.n_agents
        self.state_dim = self.n_agents * self.obs_dim + 3 * self.n_mds
        self._diag = float(np.hypot(self.cfg.area_width, self.cfg.area_height))
        self._start3 = np.array([*self.cfg.start, self.cfg.altitude])
        self._end3 = np.array([*self.cfg.end, self.cfg.altitude])
        self.state: FleetState | None = None
        self.trace: list[SlotRecord] = []
        self._rng = None

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int):
        """All UAVs on the start pad, nothing collected, full batteries."""
        m = self.n_agents
        self.state = FleetState(
            slot=0,
            positions=np.tile(self._start3, (m, 1)),
            headings=np.zeros(m),
            residual_energy=np.full(m, self.cfg.e_total),
            collected=np.zeros(self.n_mds, dtype=np.uint8),
            energy_per_uav=np.zeros(m),
            flying=np.zeros(m, dtype=np.uint8),
        )
        self._rng = rng_stream(seed, "env-channel")
        self.trace = []
        return self.state, self.observations(), self.critic_state()

    # -- observation/state construction -------------------------------------

    def _bearings(self, origin, points) -> np.ndarray:
        """Per point: unit direction (cos, sin) and bounded scaled distance."""
        delta = np.atleast_2d(points)[:, :2] - origin[:2]
        dist = np.hypot(delta[:, 0], delta[:, 1])
        safe = np.maximum(dist, 1e-9)
        return np.column_stack([delta[:, 0] / safe, delta[:, 1] / safe,
                                2.0 * np.minimum(dist / self._diag, 1.0) - 1.0])

    def observations(self) -> np.ndarray:
        """(M, obs_dim) per-agent views, all features scaled to [-1, 1].

        Directions are unit vectors with a separate bounded distance channel,
        which keeps nearby targets well conditioned for the policy net.
        """
        s = self.state
        cfg = self.cfg
        w, hgt = cfg.area_width, cfg.area_height
        out = np.empty((self.n_agents, self.obs_dim))
        c01 = s.collected.astype(float)
        md_xy = self.scenario.md_positions
        for m in range(self.n_agents):
            p = s.positions[m]
            md_feat = np.column_stack([self._bearings(p, md_xy), c01])
            others = np.delete(s.positions, m, axis=0)
            parts = [
                [np.cos(s.headings[m]), np.sin(s.headings[m])],
                [2 * p[0] / w - 1, 2 * p[1] / hgt - 1],
                [2 * s.residual_energy[m] / cfg.e_total - 1],
                self._bearings(p, self._end3[None, :]).ravel(),
                md_feat.ravel(),
                self._bearings(p, others).ravel() if len(others) else [],
                np.eye(self.n_agents)[m],
            ]
            out[m] = np.concatenate(
                [np.atleast_1d(np.asarray(q, float)) for q in parts])
        return out

    def critic_state(self) -> np.ndarray:
        """Joint observations plus global MD locations and collection status."""
        cfg = self.cfg
        md = self.scenario.md_positions
        glob = np.concatenate([
            (2 * md[:, 0] / cfg.area_width - 1),
            (2 * md[:, 1] / cfg.area_height - 1),
            self.state.collected.astype(float),
        ])
        return np.concatenate([self.observations().ravel(), glob])

    # -- action masking ------------------------------------------------------

    def predicted_sinr(self) -> np.ndarray:
        """Interference-free uplink SINR of every (UAV, MD) pair this slot."""
        cfg = self.cfg
        gain2 = md_gain_matrix(self.state.positions, self.scenario.md_positions,
                               cfg.beta_ref, cfg.kappa_nlos, cfg.los_c, cfg.los_d) ** 2
        return cfg.p_md * gain2 / cfg.noise_md

    def action_mask(self, m: int, claimed=()) -> np.ndarray:
        """Valid MD choices for agent m given earlier agents' claims; no-op always on."""
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[-1] = True
        ok = (self.state.collected == 0)
        for i in claimed:
            if i is not None and i >= 0:
                ok[i] = False
        ok &= self.predicted_sinr()[m] >= self.cfg.gamma_th_md
        mask[:-1] = ok
        return mask

    # -- transition ----------------------------------------------------------

    def step(self, action: JointAction):
        s = self.state
        cfg = self.cfg
        if s is None:
            raise RuntimeError("reset() must be called before step()")
        md_choice = np.asarray(action.md_choice, dtype=int)
        heading = np.mod(np.asarray(action.heading, float) + np.pi, 2 * np.pi) - np.pi
        speed = np.asarray(action.speed).astype(np.uint8)
        if md_choice.shape != (self.n_agents,) or np.any(speed > 1):
            raise ValueError("malformed joint action")

        # validate scheduling against the sequential masks
        claimed = []
        for m in range(self.n_agents):
            mask = self.action_mask(m, claimed)
            idx = md_choice[m] if md_choice[m] >= 0 else self.n_mds
            if not mask[idx]:
                raise ValueError(f"action mask violation: UAV {m} chose MD {md_choice[m]}")
            claimed.append(md_choice[m])

        reward = RewardBreakdown()
        potential_before = self._potential(s.positions, s.collected)

        # collection at the slot's starting positions
        report = md_uplink_sinr(s.positions, self.scenario.md_positions,
                                md_choice, cfg.p_md, cfg.noise_md,
                                cfg.beta_ref, cfg.kappa_nlos, cfg.los_c, cfg.los_d)
        served_sinr = np.zeros(self.n_agents)
        newly = 0
        for m in range(self.n_agents):
            i = md_choice[m]
            if i < 0:
                continue
            served_sinr[m] = report.sinr[m, i]
            if served_sinr[m] >= cfg.gamma_th_md and not s.collected[i]:
                s.collected[i] = 1
                newly += 1
        reward.collection = self.reward_cfg.collect * newly

        # movement with safe-distance overrides
        delta = (speed[:, None] * cfg.v_fixed * cfg.slot_seconds
                 * np.stack([np.cos(heading), np.sin(heading),
                             np.zeros(self.n_agents)], axis=1))
        intended = s.positions + delta
        intended[:, 0] = np.clip(intended[:, 0], 0.0, cfg.area_width)
        intended[:, 1] = np.clip(intended[:, 1], 0.0, cfg.area_height)
        final, overrides, blocked = self._resolve_collisions(s.positions, intended)
        moved = np.any(np.abs(final - s.positions) > 1e-12, axis=1).astype(np.uint8)

        pair_pen = 0
        for a in range(self.n_agents):
            for b in range(a + 1, self.n_agents):
                close = np.linalg.norm(final[a] - final[b]) < cfg.d_min
                if (close or (overrides[a] and blocked[a] == b)
                        or (overrides[b] and blocked[b] == a)) \
                        and not self._station_exempt(final[a], final[b]):
                    pair_pen += 1
        reward.distance = self.reward_cfg.distance_penalty * pair_pen

        # energy bookkeeping uses the effective motion after overrides
        slot_e = np.array([slot_energy(int(moved[m]), cfg.slot_seconds,
                                       self.propulsion, cfg.v_fixed)
                           for m in range(self.n_agents)])
        s.energy_per_uav += slot_e
        s.residual_energy -= slot_e
        reward.energy = -float(slot_e.sum()) / self.reward_cfg.energy_scale

        s.positions = final
        s.headings = heading
        s.flying = moved
        s.slot += 1
        reward.shaping = self._potential(final, s.collected) - potential_before

        # per-link ISAC feasibility at the slot's resulting formation
        designs, margins = [], np.zeros(0)
        if self.n_agents >= 2 and self.connected:
            if self.link_mode == "separated":
                designs, qos = separated_link_sweep(
                    s.positions, self.scenario.chain_edges, self.scenario,
                    self._rng, self.reward_cfg.link_pass,
                    self.reward_cfg.link_fail)
            else:
                designs, qos = link_feasibility_sweep(
                    s.positions, self.scenario.chain_edges, self.scenario,
                    self._rng, self.reward_cfg.link_pass, self.reward_cfg.link_fail,
                    self.sdr_opts, cache=self.sdr_cache, slot_key=s.slot)
            margins = np.array([d.margin if d is not None else np.nan
                                for d in designs])
            reward.qos = qos

        success = bool(s.collected.all()) and bool(
            (np.linalg.norm(s.positions - self._end3, axis=1)
             <= cfg.arrival_radius).all())
        if success:
            reward.bonus = self.reward_cfg.arrival_bonus
        done = success or s.slot >= cfg.horizon_slots \
            or bool((s.residual_energy <= 0).any())

        if self.record:
            self.trace.append(SlotRecord(
                slot=s.slot, positions=final.copy(), headings=heading.copy(),
                speeds=moved.copy(), served=md_choice.copy(),
                served_sinr=served_sinr, collected_after=s.collected.copy(),
                reward=reward, link_designs=designs, link_margins=margins,
                overrides=overrides.copy(), energy=float(slot_e.sum())))

        info = {"success": success, "designs": designs, "overrides": overrides}
        return s, reward, self.observations(), done, info

    def _potential(self, positions, collected) -> float:
        """State potential: negative device-deficit and landing distances."""
        r = self.reward_cfg
        if r.shaping_md == 0.0 and r.shaping_end == 0.0:
            return 0.0
        value = 0.0
        if r.shaping_md != 0.0:
            open_md = self.scenario.md_positions[collected == 0, :2]
            if len(open_md):
                diff = open_md[None, :, :] - positions[:, None, :2]
                dist = np.sqrt((diff ** 2).sum(axis=2))
                value -= r.shaping_md * float(dist.min(axis=0).sum())
        if r.shaping_end != 0.0:
            d_end = np.linalg.norm(positions[:, :2] - self._end3[:2], axis=1)
            value -= r.shaping_end * float(d_end.sum())
        return value

    def _station_exempt(self, pa, pb) -> bool:
        # pad zone plus one motion step, so the final approach cannot wedge
        # against already-parked UAVs just outside the arrival radius
        r = self.cfg.arrival_radius + self.cfg.v_fixed * self.cfg.slot_seconds
        for station in (self._start3, self._end3):
            if (np.linalg.norm(pa - station) <= r
                    and np.linalg.norm(pb - station) <= r):
                return True
        return False

    def _resolve_collisions(self, pre, intended):
        """Junior-first hover reverts until no non-exempt pair ends below d_min.

        Station zones aside, the post-step fleet therefore always satisfies
        the pairwise safe distance; a pair that was already too close before
        the step (only reachable by direct state injection) simply cannot be
        separated by reverting and is left to the distance penalty.
        """
        cand = intended.copy()
        overrides = np.zeros(self.n_agents, dtype=bool)
        blocked = np.full(self.n_agents, -1)
        for _ in range(self.n_agents * self.n_agents + 1):
            violation = None
            for a in range(self.n_agents):
                for b in range(a + 1, self.n_agents):
                    if np.linalg.norm(cand[a] - cand[b]) < self.cfg.d_min - 1e-9 \
                            and not self._station_exempt(cand[a], cand[b]):
                        moved_a = not np.array_equal(cand[a], pre[a])
                        moved_b = not np.array_equal(cand[b], pre[b])
                        if moved_a or moved_b:
                            violation = (a, b, moved_b)
                            break
                if violation:
                    break
            if violation is None:
                break
            a, b, junior_moved = violation
            junior = b if junior_moved else a
            cand[junior] = pre[junior]
            overrides[junior] = True
            blocked[junior] = a if junior == b else b
        return cand, overrides, blocked


# -- offline constraint audit ------------------------------------------------

@dataclass
class ConstraintReport:
    md_exclusivity: int = 0        # same MD scheduled twice in one slot
    coverage_missing: int = 0      # MDs never collected
    power_budget: int = 0          # designs above the transmit budget
    psd: int = 0                   # covariance eigenvalue below tolerance
    tbp: int = 0                   # sensing gain below the floor
    min_distance: int = 0          # non-exempt pairs closer than d_min
    uplink_gating: int = 0         # served slots below the MD SINR threshold
    inter_uav_sinr: int | None = 0  # infeasible link-slots; None when N/A

    @property
    def clean(self) -> bool:
        hard = (self.md_exclusivity, self.power_budget, self.psd,
                self.tbp, self.min_distance)
        return all(v == 0 for v in hard)


def check_constraints(trace, scenario: Scenario,
                      connected: bool = True) -> ConstraintReport:
    """Audit an episode trace against the mission constraints.

    ``connected`` marks methods that solve the inter-UAV transmit design; for
    disconnected baselines the link SINR constraint is reported
    not-applicable (None).
    """
    cfg = scenario.config
    rep = ConstraintReport(inter_uav_sinr=0 if connected else None)
    collected = np.zeros(cfg.num_mds, dtype=bool)
    start3 = np.array([*cfg.start, cfg.altitude])
    end3 = np.array([*cfg.end, cfg.altitude])

    r_exempt = cfg.arrival_radius + cfg.v_fixed * cfg.slot_seconds

    def exempt(pa, pb):
        for st in (start3, end3):
            if (np.linalg.norm(pa - st) <= r_exempt
                    and np.linalg.norm(pb - st) <= r_exempt):
                return True
        return False

    for rec in trace:
        active = rec.served[rec.served >= 0]
        rep.md_exclusivity += len(active) - len(np.unique(active))
        for m, i in enumerate(rec.served):
            if i >= 0:
                collected[i] = True
                if rec.served_sinr[m] < cfg.gamma_th_md:
                    rep.uplink_gating += 1
        for a in range(cfg.num_uavs):
            for b in range(a + 1, cfg.num_uavs):
                d = np.linalg.norm(rec.positions[a] - rec.positions[b])
                if d < cfg.d_min - 1e-9 and not exempt(rec.positions[a],
                                                       rec.positions[b]):
                    rep.min_distance += 1
        for design in rec.link_designs:
            if design is None:
                continue
            report = verify_design(design, design.problem.h_eff,
                                   design.problem.noise_uav,
                                   design.problem.gamma_th,
                                   design.problem.tbp_threshold,
                                   design.problem.angles,
                                   design.problem.p_max)
            if report.power_residual < -1e-6:
                rep.power_budget += 1
            if report.psd_residual < -1e-8:
                rep.psd += 1
            if design.feasible:
                if report.tbp_residuals.min() < -1e-6:
                    rep.tbp += 1
                if connected and report.sinr_residual < -1e-6:
                    rep.inter_uav_sinr += 1
            elif connected:
                rep.inter_uav_sinr += 1
    rep.coverage_missing = int((~collected).sum())
    return rep


def write_trace_csv(trace, scenario: Scenario, path):
    """Per-slot episode trace: kinematics, scheduling, rewards, link margins."""
    m_count = scenario.config.num_uavs
    n_links = max(len(scenario.chain_edges), 0)
    cols = ["slot"]
    for m in range(m_count):
        cols += [f"x_{m}", f"y_{m}", f"heading_{m}", f"speed_{m}", f"served_md_{m}"]
    cols += ["r_collection", "r_qos", "r_energy", "r_distance", "r_bonus",
             "r_shaping", "r_total"]
    cols += [f"link_margin_{k}" for k in range(n_links)]
    lines = [",".join(cols)]
    for rec in trace:
        row = [str(rec.slot)]
        for m in range(m_count):
            row += [f"{rec.positions[m, 0]:.6f}", f"{rec.positions[m, 1]:.6f}",
                    f"{rec.headings[m]:.6f}", str(int(rec.speeds[m])),
                    str(int(rec.served[m]))]
        r = rec.reward
        row += [f"{r.collection:.6f}", f"{r.qos:.6f}", f"{r.energy:.6f}",
                f"{r.distance:.6f}", f"{r.bonus:.6f}", f"{r.shaping:.6f}",
                f"{r.total:.6f}"]
        for k in range(n_links):
            val = rec.link_margins[k] if k < len(rec.link_margins) else np.nan
            row.append(f"{val:.9g}")
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
