# tests/test_checkpoint.py

import json

import numpy as np
import pytest

from conftest import random_sequences
from motion_metric.checkpoint import load_checkpoint, save_checkpoint
from motion_metric.encoder import EncoderConfig, embed_many
from motion_metric.errors import CheckpointError
from motion_metric.trainer import new_train_state


@pytest.fixture
def saved(tiny_config, tmp_path):
    state = new_train_state(tiny_config, 4)
    state.update_index = 17
    state.loss_history = [0.5, 0.25]
    state.params.running["bn3.running_mean"] = np.full(4, 0.1)
    return state, save_checkpoint(state, tmp_path / "ckpt" / "state.npz")


def test_round_trip_gives_identical_embeddings(saved, tiny_config, rng):
    state, path = saved
    restored = load_checkpoint(path)
    sequences = random_sequences(rng, ["a", "b"], per_label=3)
    before, _ = embed_many(sequences, state.params, tiny_config)
    after, _ = embed_many(sequences, restored.params, restored.encoder_config)
    assert np.array_equal(before, after)


def test_round_trip_keeps_training_state(saved):
    state, path = saved
    restored = load_checkpoint(path)
    assert restored.update_index == 17
    assert restored.loss_history == [0.5, 0.25]
    assert restored.encoder_config == state.encoder_config
    assert restored.rng.random() == state.rng.random()
    assert all(np.array_equal(restored.velocity[n], state.velocity[n]) for n in state.velocity)


def test_wrong_encoder_shape_names_the_matrix(saved):
    _, path = saved
    config = EncoderConfig(input_dim=3, hidden_size=5, embedding_size=4, attention_width=3, fc_width=6)
    with pytest.raises(CheckpointError, match="'fwd.W_fh'"):
        load_checkpoint(path, config)


def test_unsupported_version(saved, tmp_path):
    _, path = saved
    with np.load(path) as data:
        contents = {key: data[key] for key in data.files}
    header = json.loads(str(contents["header"]))
    header["version"] = 99
    contents["header"] = np.array(json.dumps(header))
    tampered = tmp_path / "tampered.npz"
    np.savez(tampered, **contents)
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(tampered)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.npz")
