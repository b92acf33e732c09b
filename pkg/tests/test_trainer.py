# tests/test_trainer.py

import json

import numpy as np
import pytest

from conftest import make_sequence, random_sequences
from motion_metric.episodes import sample_episode
from motion_metric.errors import ConfigError, NonFiniteError
from motion_metric.losses import LossConfig
from motion_metric.motion import group_by_label
from motion_metric.trainer import (
    TrainConfig,
    clip_elementwise,
    clip_global,
    global_norm,
    lr_at,
    new_train_state,
    sgd_momentum_step,
    train,
    train_step,
)


def _small_train_config(**changes):
    values = {"total_updates": 3, "samples_per_class": 2, "negative_classes": 2, "checkpoint_every": 2, "log_every": 1,
              "noise_sigma_max": 0.0, "deterministic_log": True}
    values.update(changes)
    return TrainConfig(**values)


@pytest.fixture
def groups(rng):
    return group_by_label(random_sequences(rng, ["a", "b", "c", "d"], per_label=4))


class TestSchedule:
    def test_step_decay(self):
        config = TrainConfig()
        assert lr_at(0, config) == pytest.approx(1e-4)
        assert lr_at(49, config) == pytest.approx(1e-4)
        assert lr_at(50, config) == pytest.approx(9.6e-5)
        assert lr_at(120, config) == pytest.approx(1e-4 * 0.96 ** 2)

    def test_negative_index(self):
        with pytest.raises(ValueError):
            lr_at(-1, TrainConfig())


class TestClipping:
    def test_large_norm_is_scaled_down(self):
        clipped = clip_global({"w": np.array([30.0, 40.0])}, 25.0)
        np.testing.assert_allclose(clipped["w"], [15.0, 20.0])

    def test_small_norm_is_unchanged(self):
        clipped = clip_global({"w": np.array([6.0, 8.0])}, 25.0)
        np.testing.assert_array_equal(clipped["w"], [6.0, 8.0])

    def test_zero_gradient_is_unchanged(self):
        clipped = clip_global({"w": np.zeros(3)}, 25.0)
        np.testing.assert_array_equal(clipped["w"], 0.0)

    def test_norm_is_joint_over_arrays(self):
        grads = {"a": np.array([30.0]), "b": np.array([40.0])}
        assert global_norm(grads) == 50.0
        clipped = clip_global(grads, 25.0)
        assert global_norm(clipped) == pytest.approx(25.0)

    def test_non_finite_gradient_names_the_array(self):
        with pytest.raises(NonFiniteError, match="'b'"):
            clip_global({"a": np.ones(2), "b": np.array([1.0, np.nan])}, 25.0)

    def test_elementwise_mode(self):
        clipped = clip_elementwise({"w": np.array([-30.0, 2.0, 40.0])}, 25.0)
        np.testing.assert_array_equal(clipped["w"], [-25.0, 2.0, 25.0])


class TestMomentum:
    def test_plain_sgd_without_momentum(self, tiny_config):
        state = new_train_state(tiny_config, 0)
        before = {n: a.values.copy() for n, a in state.params.weights.items()}
        grads = {n: np.ones_like(v) for n, v in before.items()}
        sgd_momentum_step(state, grads, lr=0.1, momentum=0.0)
        for name, arr in state.params.weights.items():
            np.testing.assert_allclose(arr.values, before[name] - 0.1)

    def test_velocity_accumulates(self, tiny_config):
        state = new_train_state(tiny_config, 0)
        before = state.params["fc3.b"].values.copy()
        grads = {n: np.ones_like(a.values) for n, a in state.params.weights.items()}
        sgd_momentum_step(state, grads, lr=0.1, momentum=0.9)
        sgd_momentum_step(state, grads, lr=0.1, momentum=0.9)
        np.testing.assert_allclose(state.params["fc3.b"].values, before - 0.1 * (1.0 + 1.9))

    def test_zero_gradient_leaves_parameters(self, tiny_config):
        state = new_train_state(tiny_config, 0)
        before = {n: a.values.copy() for n, a in state.params.weights.items()}
        sgd_momentum_step(state, {n: np.zeros_like(v) for n, v in before.items()}, lr=0.1, momentum=0.9)
        assert all(np.array_equal(a.values, before[n]) for n, a in state.params.weights.items())


class TestTrainStep:
    def test_is_deterministic(self, tiny_config, groups):
        episode = sample_episode(groups, 2, 2, np.random.default_rng(0))
        config = _small_train_config()
        first, loss_a, _ = train_step(new_train_state(tiny_config, 7), episode, LossConfig(negative_classes=2), config)
        second, loss_b, _ = train_step(new_train_state(tiny_config, 7), episode, LossConfig(negative_classes=2), config)
        assert loss_a == loss_b
        assert all(np.array_equal(first.params[n].values, second.params[n].values) for n in first.params.names())

    def test_updates_state_and_record(self, tiny_config, groups):
        episode = sample_episode(groups, 2, 2, np.random.default_rng(0))
        state = new_train_state(tiny_config, 7)
        before = state.params["fc1.W"].values.copy()
        state, loss, record = train_step(state, episode, LossConfig(negative_classes=2), _small_train_config())
        assert state.update_index == 1
        assert state.loss_history == [loss]
        assert record.update_index == 0
        assert record.lr == pytest.approx(1e-4)
        assert record.grad_norm_post_clip <= 25.0 + 1e-9
        assert record.wall_time_s == 0.0
        assert not np.array_equal(state.params["fc1.W"].values, before)
        assert all(a.grad is None for a in state.params.arrays())

    def test_non_finite_loss_lists_the_episode(self, tiny_config, groups):
        episode = sample_episode(groups, 2, 2, np.random.default_rng(0))
        bad = make_sequence(np.full((4, 3), np.nan), label=episode.positive_label, source_id="broken")
        episode.anchors[0] = bad
        with pytest.raises(NonFiniteError, match="broken"):
            train_step(new_train_state(tiny_config, 7), episode, LossConfig(negative_classes=2), _small_train_config())


class TestTrain:
    def test_writes_log_and_checkpoints(self, tiny_config, groups, tmp_path):
        state = train(new_train_state(tiny_config, 1), groups, LossConfig(negative_classes=2), _small_train_config(), tmp_path)
        assert state.update_index == 3
        lines = (tmp_path / "training_log.jsonl").read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["update_index"] for line in lines] == [0, 1, 2]
        assert (tmp_path / "checkpoints" / "checkpoint_000002.npz").is_file()

    def test_finished_state_is_returned_unchanged(self, tiny_config, groups):
        state = new_train_state(tiny_config, 1)
        state.update_index = 3
        assert train(state, groups, LossConfig(negative_classes=2), _small_train_config()).update_index == 3

    def test_resume_matches_an_uninterrupted_run(self, tiny_config, groups, tmp_path):
        from motion_metric.checkpoint import load_checkpoint, save_checkpoint

        config = _small_train_config(total_updates=4, checkpoint_every=0)
        straight = train(new_train_state(tiny_config, 2), groups, LossConfig(negative_classes=2), config)

        first_leg = train(new_train_state(tiny_config, 2), groups, LossConfig(negative_classes=2),
                          _small_train_config(total_updates=2, checkpoint_every=0))
        path = save_checkpoint(first_leg, tmp_path / "leg.npz")
        resumed = load_checkpoint(path)
        assert resumed.update_index == 2
        resumed = train(resumed, groups, LossConfig(negative_classes=2), config)

        assert resumed.loss_history == straight.loss_history
        for name in straight.params.names():
            np.testing.assert_array_equal(resumed.params[name].values, straight.params[name].values)

    def test_invalid_config(self, tiny_config, groups):
        with pytest.raises(ConfigError):
            train(new_train_state(tiny_config, 1), groups, LossConfig(), _small_train_config(momentum=1.0))
