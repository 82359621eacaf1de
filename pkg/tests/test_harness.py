import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from uavisac.cli import main
from uavisac.config import load_config
from uavisac.harness import (ExperimentSpec, checkpoint_path,
                             emit_comparison_table, emit_sweep_data,
                             run_experiment, validate_spec)


def small_run_config(num_mds=5, horizon=150):
    rc = load_config()
    return replace(
        rc,
        scenario=replace(rc.scenario, num_mds=num_mds, area_width=800.0,
                         area_height=800.0, start=(0.0, 800.0),
                         end=(800.0, 0.0), horizon_slots=horizon),
        pso=replace(rc.pso, swarm=8, iterations=10),
        ga=replace(rc.ga, population=8, generations=10),
        mappo=replace(rc.mappo, hidden=32, rollout=512, minibatch=128,
                      epochs=2, max_episodes=4),
    )


def small_spec(out_dir, methods=("greedy_offline", "greedy_online"),
               values=(1, 2), seeds=(0, 1)):
    return ExperimentSpec(run_config=small_run_config(), methods=methods,
                          axis="uav_count", values=values, seeds=seeds,
                          out_dir=str(out_dir))


class TestSpecValidation:
    def test_empty_methods_rejected(self, tmp_path):
        spec = replace(small_spec(tmp_path), methods=())
        assert any("method" in p for p in validate_spec(spec))
        with pytest.raises(ValueError):
            run_experiment(spec)

    def test_unknown_method_rejected(self, tmp_path):
        spec = replace(small_spec(tmp_path), methods=("warp_drive",))
        assert validate_spec(spec)

    def test_bad_axis_values_rejected(self, tmp_path):
        spec = replace(small_spec(tmp_path), values=(0,))
        assert validate_spec(spec)


class TestRunExperiment:
    def test_grid_shape_and_persistence(self, tmp_path):
        rows = run_experiment(small_spec(tmp_path))
        assert len(rows) == 2 * 2 * 2
        assert (tmp_path / "results.csv").exists()
        assert (tmp_path / "aggregates.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["methods"] == ["greedy_offline", "greedy_online"]
        assert "scenario_fingerprint" in manifest
        assert manifest["config"]["scenario"]["num_mds"] == 5

    def test_seed_repeat_byte_identical(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        run_experiment(small_spec(a_dir))
        run_experiment(small_spec(b_dir))
        assert (a_dir / "results.csv").read_bytes() == \
            (b_dir / "results.csv").read_bytes()
        assert (a_dir / "aggregates.csv").read_bytes() == \
            (b_dir / "aggregates.csv").read_bytes()

    def test_missing_checkpoint_names_method(self, tmp_path):
        spec = replace(small_spec(tmp_path), methods=("drl_sdr",))
        with pytest.raises(FileNotFoundError, match="drl_sdr"):
            run_experiment(spec)

    def test_offline_rows_mark_link_constraint_na(self, tmp_path):
        run_experiment(small_spec(tmp_path, methods=("greedy_offline",),
                                  values=(2,), seeds=(0,)))
        rows = list(csv.DictReader(open(tmp_path / "results.csv")))
        assert rows[0]["v_inter_uav"] == "na"

    def test_train_first_builds_checkpoint_and_runs_drl(self, tmp_path):
        spec = replace(small_spec(tmp_path, methods=("drl_sdr", "drl_sc"),
                                  values=(2,), seeds=(0,)),
                       train_first=True, train_episodes=2)
        rows = run_experiment(spec)
        assert checkpoint_path(tmp_path, "uav_count", 2).exists()
        assert len(rows) == 2
        sdr = next(r for r in rows if r["method"] == "drl_sdr")
        sc = next(r for r in rows if r["method"] == "drl_sc")
        # identical trajectories, but the split-array variant pays 2 W per UAV
        extra = 2.0 * 2 * float(sc["time_s"])
        assert float(sc["energy_j"]) == pytest.approx(
            float(sdr["energy_j"]) + extra, rel=1e-9)


class TestEmitters:
    def test_comparison_table_layout_roundtrip(self, tmp_path):
        run_experiment(small_spec(tmp_path))
        path = emit_comparison_table(tmp_path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "method,metric,uav_1,uav_2"
        assert len(lines) == 1 + 2 * 2
        reparsed = [line.split(",") for line in lines[1:]]
        for row in reparsed:
            assert row[1] in ("energy_1e5_j", "total_time_s")
            float(row[2]), float(row[3])
        marks = (tmp_path / "comparison_table_minima.csv").read_text()
        assert marks.startswith("metric,uav_count,best_method")

    def test_emitters_idempotent(self, tmp_path):
        run_experiment(small_spec(tmp_path))
        first = emit_comparison_table(tmp_path).read_bytes()
        second = emit_comparison_table(tmp_path).read_bytes()
        assert first == second

    def test_sweep_reductions_zero_for_equal_energy(self, tmp_path):
        # synthetic results: proposed equals the baseline
        out = tmp_path
        out.mkdir(exist_ok=True)
        header = ("method,axis,value,seed,energy_j,time_s,collected,success,"
                  "v_md_exclusivity,v_coverage_missing,v_power,v_psd,v_tbp,"
                  "v_min_distance,v_uplink_gating,v_inter_uav,plan_conflicts")
        rows = [
            "drl_sdr,md_count,10,0,50000.0,200.0,10,1,0,0,0,0,0,0,0,0,0",
            "ga,md_count,10,0,50000.0,220.0,10,1,0,0,0,0,0,0,0,na,0",
            "pso,md_count,10,0,100000.0,260.0,10,1,0,0,0,0,0,0,0,na,0",
        ]
        (out / "results.csv").write_text(header + "\n" + "\n".join(rows) + "\n")
        emit_sweep_data(out, "md_count")
        red = dict()
        for line in (out / "sweep_md_count_reductions.csv").read_text() \
                .strip().split("\n")[1:]:
            v, m, pct = line.split(",")
            red[m] = float(pct)
        assert red["ga"] == pytest.approx(0.0)
        assert red["pso"] == pytest.approx(50.0)

    def test_sweep_on_missing_axis_rejected(self, tmp_path):
        run_experiment(small_spec(tmp_path))
        with pytest.raises(ValueError):
            emit_sweep_data(tmp_path, "md_count")


class TestCli:
    def test_validate_ok(self, capsys):
        assert main(["validate"]) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[scenario]\np_max = 0\n")
        assert main(["validate", "--config", str(bad)]) == 1
        assert "p_max" in capsys.readouterr().out

    def test_run_and_table_verbs(self, tmp_path):
        cfg = tmp_path / "small.cfg"
        cfg.write_text("""
[scenario]
num_mds = 4
area_width = 800
area_height = 800
start = 0, 800
end = 800, 0
horizon_slots = 120
""")
        out = tmp_path / "res"
        rc = main(["run", "--config", str(cfg), "--methods", "greedy_offline",
                   "--axis", "uav_count", "--values", "1,2", "--seeds", "0",
                   "--out", str(out)])
        assert rc == 0
        assert (out / "results.csv").exists()
        assert main(["table", "--out", str(out)]) == 0
        assert (out / "comparison_table.csv").exists()

    def test_run_unknown_method_exits_1(self, tmp_path):
        assert main(["run", "--methods", "nope", "--out",
                     str(tmp_path)]) == 1

    def test_table_without_results_exits_2(self, tmp_path):
        assert main(["table", "--out", str(tmp_path / "empty")]) == 2

    def test_env_var_output_root(self, tmp_path, monkeypatch):
        cfg = tmp_path / "small.cfg"
        cfg.write_text("""
[scenario]
num_mds = 3
area_width = 600
area_height = 600
start = 0, 600
end = 600, 0
horizon_slots = 100
""")
        monkeypatch.setenv("UAVISAC_OUT", str(tmp_path / "envout"))
        rc = main(["run", "--config", str(cfg), "--methods", "greedy_offline",
                   "--axis", "uav_count", "--values", "1", "--seeds", "0"])
        assert rc == 0
        assert (tmp_path / "envout" / "results.csv").exists()
