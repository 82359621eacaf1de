import numpy as np
import pytest

from uavisac.channel import (effective_channel, sample_rician_channel,
                             steering_vector, tbp_gain)
from uavisac.isac_sdr import (RepairFailedError, SdrOptions, SdrProblem,
                              TransmitDesign, extract_rank_one,
                              link_feasibility_sweep, solve_feasibility,
                              verify_design)
from uavisac.scenario import ScenarioConfig, build_scenario, rng_stream

L = 12
P_MAX = 0.1
GAMMA_LIN = 10 ** (-4 / 10)          # sensing floor, -4 dB
NOISE_U = 10 ** ((-94 - 30) / 10)    # -94 dBm
ANGLES = tuple(np.deg2rad((-10.0, 0.0, 10.0)))
COMBINER = np.ones(L, dtype=complex) / np.sqrt(L)


def make_h_eff(dist, seed=0, rician_k=10.0, label="sdr-test"):
    rng = rng_stream(seed, label)
    h = sample_rician_channel((0, 0, 80), (dist, 0, 80), rician_k, 1e-6, L, rng)
    return effective_channel(h, COMBINER)


def solve(h_eff, gamma_db=8.0, gamma_lin=None, tbp=GAMMA_LIN, p_max=P_MAX,
          angles=ANGLES, opts=SdrOptions()):
    gam = 10 ** (gamma_db / 10) if gamma_lin is None else gamma_lin
    return solve_feasibility(h_eff, NOISE_U, gam, tbp, angles, p_max, opts)


class TestSolveFeasibility:
    def test_zero_power_with_positive_floor_is_infeasible(self):
        des = solve(make_h_eff(100), p_max=0.0)
        assert des.solver_status == "infeasible"
        assert des.margin < 0

    def test_isotropic_lower_bound_without_sinr(self):
        # with no SINR requirement and a single angle, the isotropic design
        # alone achieves p_max at the angle, so the margin beats p_max - Gamma
        tbp = 0.05
        des = solve(make_h_eff(100), gamma_lin=0.0, tbp=tbp,
                    angles=(ANGLES[1],))
        assert des.solver_status == "feasible"
        assert des.margin >= P_MAX - tbp - 1e-9

    def test_table_scale_instance_feasible_and_verified(self):
        h_eff = make_h_eff(100)
        des = solve(h_eff, gamma_db=8.0)
        assert des.solver_status == "feasible"
        report = verify_design(des, h_eff, NOISE_U, 10 ** 0.8, GAMMA_LIN,
                               ANGLES, P_MAX)
        assert report.passed

    def test_design_invariants(self):
        des = solve(make_h_eff(400, seed=3))
        total = np.real(np.trace(des.r_comm) + np.trace(des.r_sens))
        assert total <= P_MAX + 1e-6
        assert np.linalg.eigvalsh(des.r_comm)[0] >= -1e-8
        assert np.linalg.eigvalsh(des.r_sens)[0] >= -1e-8
        w_outer = np.outer(des.w_c, des.w_c.conj())
        assert np.linalg.norm(w_outer - des.r_comm) <= 1e-8 * max(1.0, np.linalg.norm(des.r_comm))

    def test_zero_channel_cannot_carry_data(self):
        des = solve(np.zeros((L, L)), gamma_db=8.0)
        assert des.solver_status == "infeasible"

    def test_soundness_over_seeded_instances(self):
        # no design flagged feasible may fail the independent constraint check
        for seed in range(60):
            rng = rng_stream(seed, "sound")
            dist = float(rng.uniform(20, 3000))
            gam_db = float(rng.uniform(0, 14))
            h_eff = make_h_eff(dist, seed=seed, label="sound-ch")
            des = solve(h_eff, gamma_db=gam_db)
            if des.solver_status == "feasible":
                rep = verify_design(des, h_eff, NOISE_U, 10 ** (gam_db / 10),
                                    GAMMA_LIN, ANGLES, P_MAX)
                assert rep.passed, f"false positive at seed {seed}"

    def test_hand_built_feasible_point_detected(self):
        # an explicit rank-one pair that passes verification must be found
        h_eff = make_h_eff(150, seed=1, rician_k=1e6)
        a = [steering_vector(phi, L) / np.sqrt(L) for phi in ANGLES]
        w = np.sqrt(P_MAX / 3) * a[1]
        r_s = (P_MAX / 3) * (np.outer(a[0], a[0].conj()) + np.outer(a[2], a[2].conj()))
        hand = TransmitDesign(r_comm=np.outer(w, w.conj()), r_sens=r_s, w_c=w,
                              margin=0.0, solver_status="pending")
        rep = verify_design(hand, h_eff, NOISE_U, 10 ** 0.8, GAMMA_LIN, ANGLES, P_MAX)
        assert rep.passed  # the construction is feasible...
        des = solve(h_eff, gamma_db=8.0)
        assert des.solver_status == "feasible"  # ...so the solver must agree

    def test_margin_monotone_in_power_budget(self):
        h_eff = make_h_eff(1500, seed=2)
        margins = [solve(h_eff, gamma_db=10.0, p_max=p).margin
                   for p in (0.02, 0.05, 0.1, 0.2, 0.4)]
        assert all(b >= a - 1e-6 for a, b in zip(margins, margins[1:]))

    def test_margin_monotone_in_tbp_floor(self):
        h_eff = make_h_eff(300, seed=4)
        margins = [solve(h_eff, gamma_db=8.0, tbp=g).margin
                   for g in (0.1, 0.2, 0.4, 0.6)]
        assert all(b <= a + 1e-6 for a, b in zip(margins, margins[1:]))

    def test_margin_monotone_in_sinr_floor(self):
        h_eff = make_h_eff(1200, seed=5)
        margins = [solve(h_eff, gamma_db=db).margin
                   for db in (4.0, 8.0, 11.0, 14.0)]
        assert all(b <= a + 1e-6 for a, b in zip(margins, margins[1:]))

    def test_certify_only_agrees_on_decisions(self):
        fast = SdrOptions(certify_only=True, gap_tol=1e-5)
        for seed, dist, gdb in [(0, 100, 8.0), (1, 2000, 8.0), (2, 1200, 14.0),
                                (3, 500, 11.0), (4, 3000, 6.0)]:
            h_eff = make_h_eff(dist, seed=seed, label="fastdec")
            full = solve(h_eff, gamma_db=gdb)
            quick = solve(h_eff, gamma_db=gdb, opts=fast)
            assert full.solver_status == quick.solver_status


class TestVerifyDesign:
    def test_all_zero_design_fails_each_angle(self):
        zero = np.zeros((L, L))
        des = TransmitDesign(r_comm=zero, r_sens=zero, w_c=np.zeros(L),
                             margin=0.0, solver_status="pending")
        rep = verify_design(des, make_h_eff(100), NOISE_U, 0.0, GAMMA_LIN,
                            ANGLES, P_MAX)
        assert not rep.passed
        # the gain deficit at every angle is the full floor
        assert np.allclose(rep.tbp_residuals, -1.0)

    def test_isotropic_sensing_only_passes_without_sinr(self):
        des = TransmitDesign(r_comm=np.zeros((L, L)),
                             r_sens=(P_MAX / L) * np.eye(L),
                             w_c=np.zeros(L), margin=0.0, solver_status="pending")
        rep = verify_design(des, make_h_eff(100), NOISE_U, 0.0, 0.05, ANGLES, P_MAX)
        assert rep.passed
        assert rep.power_residual >= -1e-12

    def test_solver_feasible_always_passes(self):
        for seed in range(10):
            h_eff = make_h_eff(float(50 + 100 * seed), seed=seed, label="vd")
            des = solve(h_eff)
            if des.feasible:
                rep = verify_design(des, h_eff, NOISE_U, 10 ** 0.8, GAMMA_LIN,
                                    ANGLES, P_MAX)
                assert rep.passed


class TestIsotropicIdentity:
    def test_gain_equals_budget_at_sensing_angles(self):
        r_s = (P_MAX / L) * np.eye(L)
        for phi in ANGLES:
            assert tbp_gain(r_s, phi) == pytest.approx(P_MAX, rel=1e-12)


class TestExtractRankOne:
    def test_rank_one_input_recovered(self):
        rng = rng_stream(20, "rank1")
        w0 = rng.standard_normal(L) + 1j * rng.standard_normal(L)
        w0 *= np.sqrt(0.05) / np.linalg.norm(w0)
        r_c = np.outer(w0, w0.conj())
        des = TransmitDesign(r_comm=r_c, r_sens=np.zeros((L, L)), w_c=w0,
                             margin=0.0, solver_status="feasible")
        beam, r_s = extract_rank_one(r_c, des)
        assert np.linalg.norm(np.outer(beam, beam.conj()) - r_c) <= 1e-8
        assert r_s is des.r_sens

    def test_isotropic_input_takes_repair_path(self):
        r_c = (P_MAX / L) * np.eye(L)
        h_eff = make_h_eff(100)
        problem = SdrProblem(h_eff=h_eff, noise_uav=NOISE_U, gamma_th=0.0,
                             tbp_threshold=0.05, angles=ANGLES, p_max=P_MAX)
        des = TransmitDesign(r_comm=r_c, r_sens=np.zeros((L, L)),
                             w_c=np.zeros(L), margin=0.0,
                             solver_status="feasible", problem=problem)
        beam, r_s = extract_rank_one(r_c, des)
        # residual spectrum moved into the sensing covariance, which stays PSD
        assert np.linalg.eigvalsh(0.5 * (r_s + r_s.conj().T))[0] >= -1e-12
        total = np.outer(beam, beam.conj()) + r_s
        assert np.allclose(total, r_c + des.r_sens, atol=1e-10)

    def test_repair_failure_raises(self):
        # impossibly strict SINR floor: no repair can rescue the spread beam
        h_eff = make_h_eff(100)
        problem = SdrProblem(h_eff=h_eff, noise_uav=NOISE_U, gamma_th=1e9,
                             tbp_threshold=GAMMA_LIN, angles=ANGLES, p_max=P_MAX)
        r_c = (P_MAX / L) * np.eye(L)
        des = TransmitDesign(r_comm=r_c, r_sens=np.zeros((L, L)),
                             w_c=np.zeros(L), margin=0.0,
                             solver_status="feasible", problem=problem)
        with pytest.raises(RepairFailedError):
            extract_rank_one(r_c, des)

    def test_solver_outputs_survive_extraction(self):
        for seed in range(100):
            rng = rng_stream(seed, "extract")
            dist = float(rng.uniform(50, 1500))
            h_eff = make_h_eff(dist, seed=seed, label="extract-ch")
            des = solve(h_eff)
            if not des.feasible:
                continue
            beam, r_s = extract_rank_one(des.r_comm, des)
            rebuilt = TransmitDesign(r_comm=np.outer(beam, beam.conj()),
                                     r_sens=r_s, w_c=beam, margin=0.0,
                                     solver_status="pending")
            rep = verify_design(rebuilt, h_eff, NOISE_U, 10 ** 0.8, GAMMA_LIN,
                                ANGLES, P_MAX)
            assert rep.passed, f"extraction broke feasibility at seed {seed}"


class TestLinkSweep:
    def setup_method(self):
        self.scenario = build_scenario(ScenarioConfig(num_uavs=3, seed=0))

    def test_single_uav_neutral(self):
        solo = build_scenario(ScenarioConfig(num_uavs=1, seed=0))
        designs, quality = link_feasibility_sweep(
            np.array([[0.0, 2500.0, 80.0]]), solo.chain_edges, solo,
            rng_stream(0, "sweep"))
        assert designs == []
        assert quality == 0.0

    def test_all_links_feasible_aggregation(self):
        pos = np.array([[0.0, 2500.0, 80.0], [150.0, 2400.0, 80.0],
                        [280.0, 2300.0, 80.0]])
        designs, quality = link_feasibility_sweep(
            pos, self.scenario.chain_edges, self.scenario, rng_stream(1, "sweep"))
        assert len(designs) == 2
        assert all(d.feasible for d in designs)
        assert quality == pytest.approx(2 * 0.05)

    def test_margin_no_larger_at_longer_range(self):
        near = np.array([[0.0, 0.0, 80.0], [100.0, 0.0, 80.0]])
        far = np.array([[0.0, 0.0, 80.0], [2000.0, 0.0, 80.0]])
        two = build_scenario(ScenarioConfig(num_uavs=2, seed=0))
        d_near, _ = link_feasibility_sweep(near, two.chain_edges, two,
                                           rng_stream(5, "dist"))
        d_far, _ = link_feasibility_sweep(far, two.chain_edges, two,
                                          rng_stream(5, "dist"))
        assert d_far[0].margin <= d_near[0].margin + 1e-9

    def test_cache_skips_repeat_solves(self):
        pos = np.array([[0.0, 2500.0, 80.0], [150.0, 2400.0, 80.0],
                        [280.0, 2300.0, 80.0]])
        cache = {}
        d1, q1 = link_feasibility_sweep(pos, self.scenario.chain_edges,
                                        self.scenario, rng_stream(2, "sweep"),
                                        cache=cache, slot_key=4)
        d2, q2 = link_feasibility_sweep(pos, self.scenario.chain_edges,
                                        self.scenario, rng_stream(3, "sweep"),
                                        cache=cache, slot_key=4)
        assert q1 == q2
        assert all(d is not None for d in d1)
        assert all(d is None for d in d2)


@pytest.mark.slow
class TestAgainstConvexSolver:
    def test_margins_match_reference_sdp(self):
        cp = pytest.importorskip("cvxpy")
        for seed, dist, gdb in [(0, 100, 8.0), (1, 1200, 12.0), (2, 1800, 8.0),
                                (3, 600, 10.0), (4, 2500, 6.0), (5, 300, 14.0)]:
            h_eff = make_h_eff(dist, seed=seed, label="cvx")
            gam = 10 ** (gdb / 10)
            mine = solve(h_eff, gamma_db=gdb)

            r = cp.Variable((L, L), hermitian=True)
            t = cp.Variable()
            cons = [r >> 0, cp.real(cp.trace(r)) <= P_MAX]
            for phi in ANGLES:
                a = steering_vector(phi, L)
                cons.append(cp.real(cp.trace(r @ np.outer(a, a.conj())))
                            >= GAMMA_LIN + t)
            cons.append(cp.real(cp.trace(r @ (h_eff / (gam * NOISE_U)))) >= 1.0 + t)
            prob = cp.Problem(cp.Maximize(t), cons)
            prob.solve(solver=cp.SCS, eps=1e-9, max_iters=200000)
            assert mine.margin == pytest.approx(float(t.value), abs=3e-5), \
                f"margin mismatch at seed {seed}"
