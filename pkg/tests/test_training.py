"""Optimizer steps and the training loop: exact update math, determinism,
phase switching, and the overfit-one-sample sanity oracle."""

import numpy as np
import pytest

from twostream.backbone import BackboneConfig
from twostream.errors import NumericError, ShapeError
from twostream.model import build_model
from twostream.tensor import Tensor
from twostream.training import (
    EMA_BETA,
    OptimizerState,
    TrainingConfig,
    TrainingHistory,
    rmsprop_step,
    sgd_step,
    train,
)


class TestRmsprop:
    def test_hand_evaluated_recurrence(self):
        new_p, new_acc = rmsprop_step(np.array([1.0]), np.array([1.0]), np.array([0.0]),
                                      lr=0.001, rho=0.9, fuzz=1e-8)
        assert new_acc[0] == pytest.approx(0.1)
        assert new_p[0] == pytest.approx(1.0 - 0.001 / (np.sqrt(0.1) + 1e-8), abs=1e-12)
        assert new_p[0] == pytest.approx(0.9968377, abs=1e-7)

    def test_zero_gradient_decays_accumulator(self):
        p0 = np.array([2.0, -1.0])
        acc0 = np.array([0.5, 0.25])
        new_p, new_acc = rmsprop_step(p0, np.zeros(2), acc0, rho=0.9)
        np.testing.assert_array_equal(new_p, p0)
        np.testing.assert_allclose(new_acc, 0.9 * acc0)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=5)
        g = rng.normal(size=5)
        acc = rng.uniform(size=5)
        a = rmsprop_step(p, g, acc)
        b = rmsprop_step(p, g, acc)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            rmsprop_step(np.zeros(3), np.zeros(4), np.zeros(3))

    def test_accepts_tensors(self):
        p = Tensor([1.0])
        g = Tensor([1.0])
        new_p, _ = rmsprop_step(p, g, np.zeros(1))
        assert new_p[0] == pytest.approx(0.9968377, abs=1e-7)


class TestSgd:
    def test_basic_update(self):
        assert sgd_step(np.array([1.0]), np.array([2.0]), lr=0.0001)[0] == pytest.approx(0.9998)

    def test_zero_grad_unchanged(self):
        p = np.array([3.0, -2.0])
        np.testing.assert_array_equal(sgd_step(p, np.zeros(2)), p)

    def test_linearity(self):
        p = np.array([1.0, 2.0])
        g1 = np.array([0.5, -0.5])
        g2 = np.array([0.25, 1.5])
        lr = 0.01
        combined = sgd_step(p, g1 + g2, lr)
        sequential = sgd_step(sgd_step(p, g1, lr), g2, lr)
        np.testing.assert_allclose(combined, sequential, atol=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            sgd_step(np.zeros(2), np.zeros(3))


def tiny_setup(c=2, time_step=2, seed=0):
    cfg = BackboneConfig(input_size=(8, 8), stage_channels=(4, 8), convs_per_stage=1)
    return build_model(c, time_step, backbone_config=cfg, seed=seed, lstm_hidden=8)


def toy_samples(rng, count, c, time_step, size=8):
    samples = []
    for i in range(count):
        pairs = [(rng.integers(0, 256, (size, size, 3), dtype=np.uint8),
                  rng.integers(0, 256, (size, size, 3), dtype=np.uint8))
                 for _ in range(time_step)]
        samples.append((pairs, i % c))
    return samples


class TestTrainLoop:
    def test_overfit_one_clip(self):
        # sanity oracle for the loop itself: a single sample must be
        # memorized; the step size is raised so 50 epochs suffice
        model = tiny_setup()
        samples = toy_samples(np.random.default_rng(0), 1, 2, 2)
        config = TrainingConfig(max_epochs=50, batch_size=1, seed=0, rmsprop_lr=0.01)
        _, history = train(model, None, config, samples=samples)
        assert history.records[-1].total_loss < 0.1 * history.records[0].total_loss

    def test_deterministic_history(self):
        samples = toy_samples(np.random.default_rng(1), 4, 2, 2)
        config = TrainingConfig(max_epochs=5, batch_size=2, seed=7)
        _, ha = train(tiny_setup(seed=3), None, config, samples=samples)
        _, hb = train(tiny_setup(seed=3), None, config, samples=samples)
        assert ha.to_log_text() == hb.to_log_text()

    def test_lambda_flows_into_losses(self):
        samples = toy_samples(np.random.default_rng(2), 2, 2, 2)
        model_a = tiny_setup(seed=5)
        model_b = tiny_setup(seed=5)
        _, ha = train(model_a, None, TrainingConfig(max_epochs=1, seed=1), samples=samples)
        _, hb = train(model_b, None, TrainingConfig(max_epochs=1, lambda_weight=0.0, seed=1),
                      samples=samples)
        assert ha.records[0].total_loss > hb.records[0].total_loss

    def test_phase_switches_at_most_once_and_never_reverts(self):
        samples = toy_samples(np.random.default_rng(3), 2, 2, 2)
        config = TrainingConfig(max_epochs=12, batch_size=2, seed=2,
                                switch_patience=2, switch_threshold=0.5)
        _, history = train(tiny_setup(seed=1), None, config, samples=samples)
        phases = [r.phase for r in history.records]
        assert phases[0] == "rmsprop"
        assert "sgd" in phases
        flips = sum(1 for a, b in zip(phases, phases[1:]) if a != b)
        assert flips == 1
        assert phases.index("sgd") == len(phases) - phases[::-1].index("sgd") - len(
            [p for p in phases if p == "sgd"]) + 0 or all(
            p == "sgd" for p in phases[phases.index("sgd"):])

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(tiny_setup(), [], TrainingConfig(max_epochs=1))

    def test_nan_aborts_with_group_diagnostic(self):
        model = tiny_setup()
        model.fc2.w.assign(np.full_like(model.fc2.w.data, np.nan))
        samples = toy_samples(np.random.default_rng(4), 1, 2, 2)
        with pytest.raises(NumericError):
            train(model, None, TrainingConfig(max_epochs=1, batch_size=1), samples=samples)

    def test_history_log_format(self):
        history = TrainingHistory()
        samples = toy_samples(np.random.default_rng(5), 2, 2, 2)
        _, history = train(tiny_setup(seed=8), None, TrainingConfig(max_epochs=2, seed=3),
                           samples=samples)
        lines = history.to_log_text().strip().split("\n")
        assert lines[0] == "epoch\tphase\ttotal_loss\tloss1_sum\tloss2\taccuracy"
        assert len(lines) == 3
        fields = lines[1].split("\t")
        assert fields[0] == "0" and fields[1] == "rmsprop"
        assert len(fields) == 6

    def test_ema_constant(self):
        assert EMA_BETA == 0.7


class TestOptimizerState:
    def test_rmsprop_state_updates_params(self):
        p = Tensor(np.ones(3), requires_grad=True)
        p.grad = np.ones(3)
        state = OptimizerState(kind="rmsprop", learning_rate=0.001)
        state.apply([("p", p)])
        np.testing.assert_allclose(p.data, np.full(3, 0.9968377), atol=1e-6)
        assert "p" in state.accumulators

    def test_sgd_state(self):
        p = Tensor(np.ones(3), requires_grad=True)
        p.grad = np.full(3, 2.0)
        OptimizerState(kind="sgd", learning_rate=0.0001).apply([("p", p)])
        np.testing.assert_allclose(p.data, np.full(3, 0.9998))

    def test_skips_parameters_without_grads(self):
        p = Tensor(np.ones(3), requires_grad=True)
        OptimizerState(kind="sgd", learning_rate=1.0).apply([("p", p)])
        np.testing.assert_array_equal(p.data, np.ones(3))
