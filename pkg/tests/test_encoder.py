# tests/test_encoder.py

import dataclasses

import numpy as np
import pytest

from conftest import make_sequence, random_sequences
from motion_metric.encoder import (
    EncoderConfig,
    attend,
    bilstm,
    draw_dropout_masks,
    embed,
    embed_many,
    encode_batch,
    init_params,
    lnlstm_step,
    param_shapes,
)
from motion_metric.episodes import EpisodeLayout
from motion_metric.errors import ConfigError, ShapeError
from motion_metric.gradcheck import finite_difference_check
from motion_metric.losses import LossConfig, episode_loss
from motion_metric.tensor import DenseArray


@pytest.fixture
def params(tiny_config):
    return init_params(tiny_config, np.random.default_rng(0))


def _zero_recurrent(params, direction="fwd"):
    for name, arr in params.weights.items():
        if name.startswith(f"{direction}.") and not name.endswith(("gamma", "beta")):
            arr.values[...] = 0.0


class TestInit:
    def test_same_seed_same_weights(self, tiny_config):
        a = init_params(tiny_config, np.random.default_rng(5))
        b = init_params(tiny_config, np.random.default_rng(5))
        assert a.names() == b.names() == list(param_shapes(tiny_config))
        assert all(np.array_equal(a[n].values, b[n].values) for n in a.names())

    def test_recurrent_matrices_are_orthogonal(self, params):
        w = params["fwd.W_fh"].values
        np.testing.assert_allclose(w @ w.T, np.eye(w.shape[0]), atol=1e-12)

    def test_layer_norm_starts_as_identity(self, params):
        np.testing.assert_array_equal(params["bwd.gamma"].values, 1.0)
        np.testing.assert_array_equal(params["bwd.beta"].values, 0.0)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            init_params(EncoderConfig(dropout_rate=1.0), np.random.default_rng(0))


class TestCell:
    def test_layer_norm_step(self):
        config = EncoderConfig(input_dim=2, hidden_size=3, embedding_size=2, fc_width=2, attention_width=2)
        params = init_params(config, np.random.default_rng(0))
        _zero_recurrent(params)
        h, c = lnlstm_step(np.zeros(2), np.zeros(3), np.array([1.0, 2.0, 3.0]), params, "fwd", config)
        np.testing.assert_allclose(c.values, [0.5, 1.0, 1.5])
        np.testing.assert_allclose(h.values, 0.5 * np.tanh([-1.22474, 0.0, 1.22474]), atol=1e-4)

    def test_zero_state_stays_zero(self, tiny_config, params, rng):
        _zero_recurrent(params)
        h, c = lnlstm_step(rng.normal(size=3), np.zeros(4), np.zeros(4), params, "fwd", tiny_config)
        np.testing.assert_array_equal(h.values, 0.0)
        np.testing.assert_array_equal(c.values, 0.0)

    def test_batched_step_matches_single(self, tiny_config, params, rng):
        x, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        h_batch, _ = lnlstm_step(x, h0, c0, params, "bwd", tiny_config)
        h_single, _ = lnlstm_step(x[1], h0[1], c0[1], params, "bwd", tiny_config)
        np.testing.assert_allclose(h_batch.values[1], h_single.values, atol=1e-14)

    def test_unknown_direction(self, tiny_config, params):
        with pytest.raises(ValueError):
            lnlstm_step(np.zeros(3), np.zeros(4), np.zeros(4), params, "up", tiny_config)


class TestBiLSTM:
    def test_state_matrix_shape(self, tiny_config, params, rng):
        S = bilstm(make_sequence(rng.normal(size=(7, 3))), params, tiny_config)
        assert S.shape == (7, 8)

    def test_single_frame_with_mirrored_directions(self, tiny_config, params, rng):
        for name in param_shapes(tiny_config):
            if name.startswith("bwd."):
                params[name].values[...] = params["fwd." + name[4:]].values
        S = bilstm(make_sequence(rng.normal(size=(1, 3))), params, tiny_config)
        assert S.shape == (1, 8)
        np.testing.assert_array_equal(S.values[0, :4], S.values[0, 4:])

    def test_dimension_mismatch(self, tiny_config, params, rng):
        with pytest.raises(ShapeError):
            bilstm(make_sequence(rng.normal(size=(5, 2))), params, tiny_config)


class TestAttention:
    def test_constant_scores_are_uniform(self, tiny_config, params, rng):
        params["attn.W_s2"].values[...] = 0.0
        S = DenseArray(rng.normal(size=(4, 8)))
        pooled, scores = attend(S, params, tiny_config)
        np.testing.assert_allclose(scores.values, 0.25)
        np.testing.assert_allclose(pooled.values[0], S.values.mean(axis=0))

    def test_softmax_of_crafted_scores(self):
        config = EncoderConfig(input_dim=1, hidden_size=1, attention_width=1, embedding_size=1, fc_width=1)
        params = init_params(config, np.random.default_rng(0))
        params["attn.W_s1"].values[...] = [[1.0, 0.0]]
        params["attn.W_s2"].values[...] = [[2.0 * np.log(3.0)]]
        S = DenseArray([[0.0, 1.0], [np.arctanh(0.5), 3.0]])
        pooled, scores = attend(S, params, config)
        np.testing.assert_allclose(scores.values, [0.25, 0.75])
        np.testing.assert_allclose(pooled.values[0, 1], 0.25 * 1.0 + 0.75 * 3.0)

    def test_negative_log_mode(self, tiny_config, params, rng):
        params["attn.W_s2"].values[...] = 0.0
        config = dataclasses.replace(tiny_config, attention_mode="paper_neglog")
        _, scores = attend(DenseArray(rng.normal(size=(2, 8))), params, config)
        np.testing.assert_allclose(scores.values, [np.log(2.0), np.log(2.0)])

    def test_disabled_attention_mean_pools(self, tiny_config, params, rng):
        config = dataclasses.replace(tiny_config, attention_enabled=False)
        S = DenseArray(rng.normal(size=(5, 8)))
        pooled, scores = attend(S, params, config)
        np.testing.assert_allclose(scores.values, 0.2)
        np.testing.assert_allclose(pooled.values[0], S.values.mean(axis=0))


class TestEmbed:
    def test_embeddings_are_unit_norm(self, tiny_config, params, rng):
        embeddings, attention = embed_many(random_sequences(rng, ["a", "b"], per_label=4), params, tiny_config)
        np.testing.assert_allclose(np.linalg.norm(embeddings, axis=1), 1.0, atol=1e-9)
        assert all(np.isclose(a.sum(), 1.0) for a in attention)

    def test_length_does_not_change_dimension(self, tiny_config, params, rng):
        short = embed(make_sequence(rng.normal(size=(90, 3))), params, tiny_config)
        long = embed(make_sequence(rng.normal(size=(150, 3))), params, tiny_config)
        assert short.shape == long.shape == (4,)

    def test_eval_mode_is_deterministic(self, tiny_config, params, rng):
        seq = make_sequence(rng.normal(size=(6, 3)))
        np.testing.assert_array_equal(embed(seq, params, tiny_config).values, embed(seq, params, tiny_config).values)

    def test_batching_does_not_change_eval_embeddings(self, tiny_config, params, rng):
        sequences = random_sequences(rng, ["a", "b", "c"], per_label=3, lengths=(3, 8))
        batched = encode_batch(sequences, params, tiny_config).embeddings.values
        for row, seq in zip(batched, sequences):
            np.testing.assert_allclose(row, embed(seq, params, tiny_config).values, atol=1e-12)

    def test_train_mode_needs_masks_with_dropout(self, tiny_config, params, rng):
        config = dataclasses.replace(tiny_config, dropout_rate=0.5)
        sequences = random_sequences(rng, ["a"], per_label=3)
        with pytest.raises(ValueError, match="dropout masks"):
            encode_batch(sequences, params, config, mode="train")
        masks = draw_dropout_masks(config, rng)
        result = encode_batch(sequences, params, config, mode="train", dropout_masks=masks)
        assert set(result.batch_stats) == {"bn0", "bn1", "bn2", "bn3"}

    def test_dimension_mismatch(self, tiny_config, params, rng):
        with pytest.raises(ShapeError):
            embed(make_sequence(rng.normal(size=(5, 4))), params, tiny_config)

    def test_train_mode_rejects_a_single_sequence(self, tiny_config, params, rng):
        seq = make_sequence(rng.normal(size=(6, 3)))
        with pytest.raises(ValueError, match="two distinct sequences"):
            embed(seq, params, tiny_config, mode="train")

    def test_train_mode_rejects_duplicates(self, tiny_config, params, rng):
        seq = make_sequence(rng.normal(size=(6, 3)))
        with pytest.raises(ValueError, match="two distinct sequences"):
            encode_batch([seq, seq], params, tiny_config, mode="train")

    def test_train_mode_embeddings_are_unit_norm(self, tiny_config, params, rng):
        sequences = random_sequences(rng, ["a", "b"], per_label=2)
        result = encode_batch(sequences, params, tiny_config, mode="train")
        np.testing.assert_allclose(np.linalg.norm(result.embeddings.values, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("loss_kind, margin", [
    ("mmd_nca", None),
    ("triplet", 1.0),
    ("contrastive", 1.0),
    ("nca", None),
    ("n_pair", None),
])
def test_encoder_gradient_matches_finite_differences(tiny_config, rng, loss_kind, margin):
    config = dataclasses.replace(tiny_config, init_std=0.3)
    params = init_params(config, np.random.default_rng(3))
    episode = (
        random_sequences(rng, ["a"], per_label=4, lengths=(3, 6))
        + random_sequences(rng, ["b"], per_label=2, lengths=(3, 6))
        + random_sequences(rng, ["c"], per_label=2, lengths=(3, 6))
    )
    layout = EpisodeLayout(n_anchors=2, n_positives=2, negative_sizes=(2, 2))
    loss_config = LossConfig(loss_kind=loss_kind, margin=margin, negative_classes=2)
    loss_config.validate()

    def loss(_):
        result = encode_batch(episode, params, config, mode="train")
        return episode_loss(loss_config, result.embeddings, layout)

    assert finite_difference_check(loss, params.arrays()) < 1e-4
