import json
import threading

import numpy as np
import pytest

from swarmgrad.core import Dynamic, DynamicsConfig, gradient_weight_matrix
from swarmgrad.coordinator import CoordinatorServer
from swarmgrad.errors import ArgumentError, ProtocolError
from swarmgrad.models import SequenceBatch, benchmark_model, build_sequence_classifier
from swarmgrad.worker import (
    CoordinatorClient,
    InProcessExchange,
    particle_rngs,
    run_particle,
    run_swarm_inprocess,
    train_epoch,
)


def tiny_classifier():
    return build_sequence_classifier(
        "rnn", input_dim=4, seq_len=5, num_classes=3, d_model=5, hidden_units=5,
        head_dim=6, noise_sigma=0.0, dropout_rate=0.0)


def tiny_batch(n=12, seed=0):
    rng = np.random.default_rng(seed)
    return SequenceBatch(rng.normal(size=(n, 5, 4)), rng.integers(0, 3, n), 3)


def solo_config(**kw):
    kw.setdefault("gradient_weights", gradient_weight_matrix(1))
    kw.setdefault("k", 0)
    kw.setdefault("warmup_epochs", 0)
    return DynamicsConfig(**kw)


class TestTrainEpoch:
    def test_full_batch_single_step_equals_gd_step(self):
        model = tiny_classifier()
        data = tiny_batch()
        params = model.init_params(1)
        rng = np.random.default_rng(2)
        result = train_epoch(model, params, data, batch_size=len(data),
                             learning_rate=0.1, rng=rng)
        _, grad = model.value_and_gradient(params, data)
        np.testing.assert_array_equal(result.params, params - 0.1 * grad)

    def test_zero_learning_rate_keeps_params(self):
        model = tiny_classifier()
        data = tiny_batch()
        params = model.init_params(1)
        result = train_epoch(model, params, data, batch_size=4,
                             learning_rate=0.0, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(result.params, params)
        assert result.epoch_loss == pytest.approx(model.evaluate(params, data), abs=1e-9)

    def test_sphere_losses_strictly_decrease(self):
        model = benchmark_model("sphere", 8)
        params = model.init_params(3)
        losses = [model.evaluate(params, None)]
        rng = np.random.default_rng(0)
        for _ in range(3):
            result = train_epoch(model, params, None, 1, 0.1, rng)
            params = result.params
            losses.append(result.full_loss)
        # analytic contraction: each step scales the loss by (1 - 2*0.1)^2
        for before, after in zip(losses, losses[1:]):
            assert after == pytest.approx(before * 0.64, rel=1e-12)

    def test_oversized_batch_rejected(self):
        model = tiny_classifier()
        data = tiny_batch(n=6)
        with pytest.raises(ArgumentError):
            train_epoch(model, model.init_params(0), data, batch_size=7,
                        learning_rate=0.1, rng=np.random.default_rng(0))

    def test_last_minibatch_gradient_mode(self):
        model = benchmark_model("sphere", 4)
        params = model.init_params(1)
        result = train_epoch(model, params, None, 1, 0.1,
                             np.random.default_rng(0),
                             exchange_gradient="last_minibatch")
        np.testing.assert_array_equal(result.gradient, 2.0 * params)


class TestRunParticle:
    def test_single_particle_equals_pure_sgd(self):
        exchange = InProcessExchange(1)
        model = benchmark_model("sphere", 20)
        result = run_particle(model, None, solo_config(dynamic=Dynamic.DYNAMIC1,
                                                       c1=0.0, c2=0.0),
                              exchange, epochs=10, batch_size=1,
                              learning_rate=0.05, base_seed=9,
                              expected_particles=1)
        init_seed, _, _, _ = particle_rngs(9, 0)
        x = model.init_params(init_seed)
        for _ in range(10):
            x = x - 0.05 * model.gradient(x, None)  # train_epoch step
            x = x - 0.05 * model.gradient(x, None)  # dynamic step
        np.testing.assert_array_equal(result.final_position, x)

    def test_zero_epochs_logs_only_init(self, tmp_path):
        exchange = InProcessExchange(1)
        log = tmp_path / "traj.jsonl"
        result = run_particle(benchmark_model("sphere", 4), None, solo_config(),
                              exchange, epochs=0, batch_size=1,
                              learning_rate=0.1, base_seed=0,
                              expected_particles=1, log_path=log)
        records = [json.loads(line) for line in open(log)]
        assert len(records) == 1 and records[0]["event"] == "init"
        assert result.trajectory[0]["epoch"] == -1

    def test_publish_count_equals_epochs(self, tmp_path):
        from swarmgrad.coordinator import RunLog, replay_losses
        run_log = RunLog(tmp_path / "run.jsonl")
        results = run_swarm_inprocess(
            lambda: benchmark_model("sphere", 6), None,
            DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=1),
            epochs=7, batch_size=1, learning_rates=[0.1, 0.01, 0.05, 0.02],
            base_seed=4, run_log=run_log)
        run_log.close()
        assert len(replay_losses(tmp_path / "run.jsonl")) == 4 * 7

    def test_monotone_bests_all_dynamics(self):
        for dyn in (Dynamic.DYNAMIC1, Dynamic.DYNAMIC2, Dynamic.INDIVIDUAL_GD):
            results = run_swarm_inprocess(
                lambda: benchmark_model("rastrigin", 6), None,
                DynamicsConfig(dynamic=dyn, warmup_epochs=1),
                epochs=10, batch_size=1,
                learning_rates=[1e-2, 1e-3, 1e-4, 5e-3], base_seed=13)
            for r in results:
                bests = [rec["best_loss"] for rec in r.trajectory
                         if rec["event"] == "epoch"]
                nbests = [rec["nbhd_best_loss"] for rec in r.trajectory
                          if rec["event"] == "epoch"]
                assert all(b2 <= b1 for b1, b2 in zip(bests, bests[1:]))
                assert all(n2 <= n1 for n1, n2 in zip(nbests, nbests[1:]))
                assert all(n <= b for n, b in zip(nbests, bests))

    def test_networked_equals_inprocess_with_classifier(self, tmp_path):
        model_factory = tiny_classifier
        data = tiny_batch(n=16, seed=5)
        cfg = DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=1)
        lrs = [1e-2, 1e-3, 1e-4, 5e-3]
        inproc = run_swarm_inprocess(model_factory, data, cfg, epochs=4,
                                     batch_size=4, learning_rates=lrs,
                                     base_seed=6)
        server = CoordinatorServer("127.0.0.1", 0, 4, "net", tmp_path / "log.jsonl",
                                   barrier_timeout=60)
        server.start()
        model = model_factory()
        results = [None] * 4

        def work(i):
            client = CoordinatorClient(*server.address)
            try:
                results[i] = run_particle(model, data, cfg, client, 4, 4,
                                          lambda pid: lrs[pid], 6, run_id="net",
                                          expected_particles=4,
                                          barrier_timeout=60)
            finally:
                client.close()

        threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        server.wait(10)
        server.stop()
        by_id = {r.particle_id: r for r in results}
        for p in inproc:
            net = by_id[p.particle_id]
            for rec_a, rec_b in zip(p.trajectory, net.trajectory):
                if rec_a["event"] == "epoch":
                    assert rec_a["loss"] == rec_b["loss"]
            np.testing.assert_array_equal(p.final_position, net.final_position)

    def test_velocity_reset_flag_changes_only_bookkeeping(self):
        base = dict(epochs=6, batch_size=1, learning_rates=[0.01, 0.02, 0.03, 0.04],
                    base_seed=2)
        keep = run_swarm_inprocess(lambda: benchmark_model("sphere", 5), None,
                                   DynamicsConfig(dynamic=Dynamic.DYNAMIC1,
                                                  warmup_epochs=0), **base)
        reset = run_swarm_inprocess(lambda: benchmark_model("sphere", 5), None,
                                    DynamicsConfig(dynamic=Dynamic.DYNAMIC1,
                                                   warmup_epochs=0,
                                                   reset_velocity_each_epoch=True),
                                    **base)
        # prior velocity never enters the update rules
        for a, b in zip(keep, reset):
            np.testing.assert_array_equal(a.final_position, b.final_position)

    def test_fault_injection_aborts_survivors(self):
        exchange = InProcessExchange(3)
        cfg = DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=0,
                             gradient_weights=gradient_weight_matrix(3), k=2)
        model = benchmark_model("sphere", 4)
        outcome = [None] * 3
        for pid in range(3):
            exchange.register("f", 3)

        def work(pid):
            try:
                run_particle(model, None, cfg, exchange, 6, 1, 0.01, 1,
                             expected_particles=3, particle_id=pid,
                             barrier_timeout=1.0,
                             fail_at_epoch=3 if pid == 0 else None)
                outcome[pid] = "done"
            except ProtocolError:
                outcome[pid] = "error"

        threads = [threading.Thread(target=work, args=(pid,)) for pid in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert outcome == ["error", "error", "error"]
        assert 3 not in exchange.released_epochs()
        assert 2 in exchange.released_epochs()

    def test_abort_writes_diagnostic_record(self, tmp_path):
        exchange = InProcessExchange(2)
        model = benchmark_model("sphere", 4)
        cfg = DynamicsConfig(dynamic=Dynamic.DYNAMIC1, warmup_epochs=0,
                             gradient_weights=gradient_weight_matrix(2), k=1)
        log = tmp_path / "abort.jsonl"
        exchange.register("a", 2)
        exchange.register("a", 2)
        with pytest.raises(ProtocolError):
            run_particle(model, None, cfg, exchange, 3, 1, 0.01, 1,
                         expected_particles=2, particle_id=0,
                         barrier_timeout=0.3, log_path=log)
        records = [json.loads(line) for line in open(log)]
        assert records[-1]["event"] == "abort"
        assert "timeout" in records[-1]["error"]
