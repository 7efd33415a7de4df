import csv
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from swarmgrad.config import (
    DEFAULTS,
    ExperimentConfig,
    build_dynamics,
    build_model_and_data,
    learning_rate_for,
    load_config,
)
from swarmgrad.core import Dynamic
from swarmgrad.errors import ConfigError
from swarmgrad.experiment import plot_emit, run_experiment


def fresh_config(**overrides):
    raw = json.loads(json.dumps(DEFAULTS))
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if field:
            raw[section][field] = value
        else:
            raw[section] = value
    return ExperimentConfig(raw)


def bench_config(tmp_path, seeds=(1, 2), dynamics=("individual", "dynamic1")):
    cfg = fresh_config()
    cfg.raw["model"] = {"kind": "benchmark", "name": "sphere", "dim": 6}
    cfg.raw["swarm"].update(num_particles=2, epochs=3,
                            learning_rates=[0.05, 0.01])
    cfg.raw["seeds"] = list(seeds)
    cfg.raw["grid"] = {"dynamics": list(dynamics)}
    cfg.raw["out_dir"] = str(tmp_path / "out")
    return ExperimentConfig(cfg.raw)


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig(json.loads(json.dumps(DEFAULTS)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="valid JSON"):
            load_config(p)

    def test_user_overrides_merge_over_defaults(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"swarm": {"epochs": 7}}))
        cfg = load_config(p)
        assert cfg.swarm["epochs"] == 7
        assert cfg.swarm["batch_size"] == 8  # default preserved

    @pytest.mark.parametrize("key,value,fragment", [
        ("swarm.num_particles", 0, "swarm.num_particles"),
        ("swarm.batch_size", -1, "swarm.batch_size"),
        ("swarm.learning_rates", [], "swarm.learning_rates"),
        ("dynamics.beta", -2, "dynamics.beta"),
        ("dynamics.dynamic", "dynamic9", "dynamics.dynamic"),
        ("model.kind", "prophecy", "model.kind"),
        ("seeds", "nope", "seeds"),
    ])
    def test_validation_names_offending_key(self, key, value, fragment):
        with pytest.raises(ConfigError) as err:
            fresh_config(**{key: value})
        assert fragment in str(err.value)

    def test_learning_rate_regime(self):
        cfg = fresh_config()
        lr = learning_rate_for(cfg, base_seed=5)
        assert [lr(0), lr(1), lr(2)] == [1e-2, 1e-3, 1e-4]
        wild = lr(3)
        assert 1e-5 <= wild <= 1e-1
        assert lr(3) == wild  # drawn once per run, deterministic
        assert learning_rate_for(cfg, base_seed=5)(3) == wild
        assert learning_rate_for(cfg, base_seed=6)(3) != wild

    def test_neighbor_count_clamped_to_group(self):
        cfg = fresh_config()
        assert cfg.raw["dynamics"]["num_neighbors"] == 4
        dyn = build_dynamics(cfg, Dynamic.DYNAMIC1)
        assert dyn.k == 3  # 4-particle group: self + 3 neighbors
        assert dyn.gradient_weights.shape == (4, 4)
        assert dyn.gradient_weights[0, 3] == 10.0

    def test_explicit_weight_matrix(self):
        cfg = fresh_config()
        cfg.raw["swarm"]["num_particles"] = 2
        cfg.raw["dynamics"]["gradient_weights"] = [[0.0, 0.3], [0.3, 0.0]]
        dyn = build_dynamics(cfg, Dynamic.DYNAMIC2)
        assert dyn.gradient_weights[0, 1] == 0.3

    def test_wrong_matrix_shape(self):
        cfg = fresh_config()
        cfg.raw["dynamics"]["gradient_weights"] = [[0.0, 1.0], [1.0, 0.0]]
        with pytest.raises(ConfigError, match="gradient_weights"):
            build_dynamics(cfg, Dynamic.DYNAMIC1)

    def test_sequence_model_and_split(self):
        cfg = fresh_config()
        cfg.raw["data"].update(samples_per_class=5, test_per_class=2,
                               num_classes=3)
        factory, train, test = build_model_and_data(cfg)
        assert len(train) == 15 and len(test) == 6
        assert train.inputs.shape == (15, 16, 8)
        model = factory()
        assert model.dim > 0

    def test_benchmark_model_has_no_data(self):
        cfg = fresh_config(model={"kind": "benchmark", "name": "rastrigin",
                                  "dim": 10})
        factory, train, test = build_model_and_data(cfg)
        assert train is None and test is None
        assert factory().dim == 10

    def test_dataset_export_and_reuse(self, tmp_path):
        path = str(tmp_path / "dataset.txt")
        cfg = fresh_config()
        cfg.raw["data"].update(samples_per_class=3, test_per_class=1,
                               save_path=path)
        _, train_a, _ = build_model_and_data(cfg)
        assert Path(path).exists()
        reuse = fresh_config()
        reuse.raw["data"].update(samples_per_class=3, test_per_class=1,
                                 load_path=path)
        _, train_b, _ = build_model_and_data(reuse)
        np.testing.assert_array_equal(train_a.inputs, train_b.inputs)

    def test_dataset_reuse_size_mismatch(self, tmp_path):
        path = str(tmp_path / "dataset.txt")
        cfg = fresh_config()
        cfg.raw["data"].update(samples_per_class=3, test_per_class=1,
                               save_path=path)
        build_model_and_data(cfg)
        bad = fresh_config()
        bad.raw["data"].update(samples_per_class=9, test_per_class=1,
                               load_path=path)
        with pytest.raises(ConfigError, match="load_path"):
            build_model_and_data(bad)

    def test_model_grid_axis(self):
        cfg = fresh_config()
        cfg.raw["models"] = [
            {"kind": "benchmark", "name": "sphere", "dim": 4},
            {"kind": "sequence", "arch": "gru", "label": "gru-small"},
        ]
        sections = cfg.model_sections
        assert [s.get("label", s.get("name")) for s in sections] == \
            ["sphere", "gru-small"]
        assert sections[1]["head_dim"] == 64  # defaults merged in


class TestExperiment:
    def test_grid_runs_and_summary(self, tmp_path):
        cfg = bench_config(tmp_path)
        report = run_experiment(cfg)
        rows = list(csv.DictReader(open(report["summary_csv"])))
        assert {(r["model"], r["dynamic"]) for r in rows} == \
            {("sphere6", "individual"), ("sphere6", "dynamic1")}
        for r in rows:
            assert int(r["runs"]) == 2
        run_rows = list(csv.DictReader(open(report["runs_csv"])))
        assert len(run_rows) == 4  # 2 dynamics x 2 seeds

    def test_two_repetitions_spread_is_half_range(self, tmp_path):
        cfg = bench_config(tmp_path)
        report = run_experiment(cfg)
        run_rows = list(csv.DictReader(open(report["runs_csv"])))
        finals = {}
        for r in run_rows:
            finals.setdefault(r["dynamic"], []).append(float(r["best_loss"]))
        rows = {r["dynamic"]: r for r in csv.DictReader(open(report["summary_csv"]))}
        for dynamic, pair in finals.items():
            half_range = abs(pair[0] - pair[1]) / 2.0
            assert float(rows[dynamic]["loss_std"]) == pytest.approx(half_range,
                                                                     rel=1e-12)
            assert float(rows[dynamic]["loss_mean"]) == pytest.approx(
                sum(pair) / 2.0, rel=1e-12)

    def test_single_seed_zero_spread(self, tmp_path):
        cfg = bench_config(tmp_path, seeds=(3,), dynamics=("dynamic2",))
        report = run_experiment(cfg)
        rows = list(csv.DictReader(open(report["summary_csv"])))
        assert len(rows) == 1
        assert float(rows[0]["loss_std"]) == 0.0

    def test_summary_byte_identical_across_reruns(self, tmp_path):
        cfg_a = bench_config(tmp_path / "a")
        cfg_b = bench_config(tmp_path / "b")
        rep_a = run_experiment(cfg_a)
        rep_b = run_experiment(cfg_b)
        assert Path(rep_a["summary_csv"]).read_bytes() == \
            Path(rep_b["summary_csv"]).read_bytes()

    def test_figures_rendered(self, tmp_path):
        cfg = bench_config(tmp_path, seeds=(1,), dynamics=("dynamic1",))
        report = run_experiment(cfg)
        figures = list(Path(report["figures_dir"]).glob("*.png"))
        assert figures and all(f.stat().st_size > 0 for f in figures)

    def test_trajectory_series_length_equals_epochs(self, tmp_path):
        cfg = bench_config(tmp_path, seeds=(1,), dynamics=("dynamic1",))
        report = run_experiment(cfg)
        logs = sorted(Path(report["out_dir"]).glob("logs/**/*.jsonl"))
        assert logs
        csv_path, png_path = plot_emit(logs, tmp_path / "plots")
        rows = list(csv.reader(open(csv_path)))
        assert len(rows) - 1 == cfg.swarm["epochs"]
        assert png_path.exists()

    def test_plot_emit_empty_log_header_only(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        csv_path, _ = plot_emit([empty], tmp_path / "plots")
        rows = list(csv.reader(open(csv_path)))
        assert len(rows) == 1  # header only


class TestCLI:
    def run_cli(self, *args, env_extra=None):
        env = dict(os.environ)
        if env_extra:
            env.update(env_extra)
        return subprocess.run([sys.executable, "-m", "swarmgrad.cli", *args],
                              capture_output=True, text=True, env=env,
                              timeout=300)

    def test_missing_config_exits_2_with_usage(self):
        proc = self.run_cli("run", "--mode", "inprocess")
        assert proc.returncode == 2
        assert "config" in proc.stderr.lower()
        assert "usage" in proc.stderr.lower()

    def test_nonexistent_config_exits_2(self, tmp_path):
        proc = self.run_cli("run", "--config", str(tmp_path / "no.json"))
        assert proc.returncode == 2

    def test_inprocess_run_and_env_fallback(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "model": {"kind": "benchmark", "name": "sphere", "dim": 4},
            "swarm": {"num_particles": 2, "epochs": 2,
                      "learning_rates": [0.05, 0.01]},
            "grid": {"dynamics": ["dynamic1"]},
            "seeds": [1],
        }))
        out = tmp_path / "from-env"
        proc = self.run_cli("run", env_extra={
            "SWARMGRAD_CONFIG": str(cfg_path), "SWARMGRAD_OUT": str(out)})
        assert proc.returncode == 0, proc.stderr
        assert (out / "summary.csv").exists()

    def test_plot_emit_command(self, tmp_path):
        log = tmp_path / "t.jsonl"
        log.write_text(json.dumps({"event": "epoch", "epoch": 0, "loss": 1.0}) + "\n"
                       + json.dumps({"event": "epoch", "epoch": 1, "loss": 0.5}) + "\n")
        proc = self.run_cli("plot-emit", str(log), "--out", str(tmp_path / "p"))
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "p" / "series.csv").exists()
        assert (tmp_path / "p" / "series.png").exists()

    def test_verify_dynamics_suite_passes(self):
        proc = self.run_cli("verify", "--suite", "dynamics")
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "PASS dynamics.sgd_degeneracy" in proc.stdout

    def test_verify_failure_exit_code(self, monkeypatch):
        import swarmgrad.cli as cli
        import swarmgrad.verify as verify
        monkeypatch.setattr(verify, "run_suite", lambda name: [
            verify.CheckResult("fake.check", False, "injected failure")])
        assert cli.main(["verify", "--suite", "dynamics"]) == cli.EXIT_VERIFY
