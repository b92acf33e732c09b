# src/motion_metric/encoder.py

"""Sequence encoder: bidirectional layer-normalized LSTM, attention pooling, FC head.

A branch maps a variable-length motion sequence to a unit-norm embedding:

    frames -> BiLNLSTM states S -> dropout -> batch norm -> attention pooling
           -> FC -> ReLU -> dropout -> BN -> FC -> ReLU -> BN -> FC -> BN -> l2 norm

All branches of an episode share one parameter set and one dropout mask.
Sequences of equal length are unrolled together as one batch.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .logger_setup import get_logger
from .motion import MotionSequence
from .tensor import (
    DenseArray,
    add_rows,
    as_dense,
    clamp_min,
    concat,
    logsumexp,
    matmul,
    reduce_mean,
    relu,
    reshape,
    sigmoid,
    softmax,
    sq_norm,
    sqrt,
    stack,
    take_slice,
    tanh,
    transpose,
)

logger = get_logger(__name__)

GATES = ("f", "i", "o", "c")
DIRECTIONS = ("fwd", "bwd")
ATTENTION_MODES = ("softmax", "paper_neglog")


@dataclass
class EncoderConfig:
    input_dim: int = 24
    hidden_size: int = 128
    embedding_size: int = 128
    attention_width: int = 10
    fc_width: int = 320
    dropout_rate: float = 0.5
    attention_mode: str = "softmax"
    attention_enabled: bool = True
    layer_norm_enabled: bool = True
    state_batch_norm: bool = True
    literal_layer_norm_init: bool = False
    layer_norm_eps: float = 1e-5
    batch_norm_eps: float = 1e-5
    batch_norm_momentum: float = 0.9
    init_std: float = 0.001

    def validate(self) -> None:
        for name in ("input_dim", "hidden_size", "embedding_size", "attention_width", "fc_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder.{name}", "must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("encoder.dropout_rate", f"must be in [0, 1), got {self.dropout_rate}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError("encoder.attention_mode", f"expected one of {ATTENTION_MODES}")
        if not 0.0 <= self.batch_norm_momentum < 1.0:
            raise ConfigError("encoder.batch_norm_momentum", "must be in [0, 1)")


def param_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    """Shapes of every trainable array, in canonical order."""
    H, d, F, e = config.hidden_size, config.input_dim, config.fc_width, config.embedding_size
    shapes: Dict[str, Tuple[int, ...]] = {}
    for direction in DIRECTIONS:
        for gate in GATES:
            shapes[f"{direction}.W_{gate}h"] = (H, H)
            shapes[f"{direction}.W_{gate}x"] = (d, H)
            shapes[f"{direction}.b_{gate}"] = (H,)
        shapes[f"{direction}.gamma"] = (H,)
        shapes[f"{direction}.beta"] = (H,)
    if config.state_batch_norm:
        shapes["bn0.scale"] = (2 * H,)
        shapes["bn0.shift"] = (2 * H,)
    shapes["attn.W_s1"] = (config.attention_width, 2 * H)
    shapes["attn.W_s2"] = (config.attention_width, 1)
    for layer, (fan_in, fan_out) in (("1", (2 * H, F)), ("2", (F, F)), ("3", (F, e))):
        shapes[f"fc{layer}.W"] = (fan_in, fan_out)
        shapes[f"fc{layer}.b"] = (fan_out,)
        shapes[f"bn{layer}.scale"] = (fan_out,)
        shapes[f"bn{layer}.shift"] = (fan_out,)
    return shapes


def running_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    """Shapes of the batch-norm running statistics."""
    layers = {"1": config.fc_width, "2": config.fc_width, "3": config.embedding_size}
    if config.state_batch_norm:
        layers = {"0": 2 * config.hidden_size, **layers}
    shapes: Dict[str, Tuple[int, ...]] = {}
    for layer, width in layers.items():
        shapes[f"bn{layer}.running_mean"] = (width,)
        shapes[f"bn{layer}.running_var"] = (width,)
    return shapes


@dataclass
class EncoderParams:
    """Trainable weights plus batch-norm running statistics."""

    weights: Dict[str, DenseArray]
    running: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> DenseArray:
        return self.weights[name]

    def names(self) -> List[str]:
        return list(self.weights)

    def arrays(self) -> List[DenseArray]:
        return list(self.weights.values())

    def zero_grad(self) -> None:
        for arr in self.weights.values():
            arr.zero_grad()

    def grads(self) -> Dict[str, np.ndarray]:
        """Gradients by name; arrays that received none (unused branches) read as zeros."""
        return {
            name: arr.grad if arr.grad is not None else np.zeros_like(arr.values)
            for name, arr in self.weights.items()
        }

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            weights={n: DenseArray(a.values, requires_grad=a.requires_grad, name=n) for n, a in self.weights.items()},
            running={n: v.copy() for n, v in self.running.items()},
        )

    def update_running_stats(self, batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]], momentum: float) -> None:
        for layer, (mean, var) in batch_stats.items():
            self.running[f"{layer}.running_mean"] = momentum * self.running[f"{layer}.running_mean"] + (1.0 - momentum) * mean
            self.running[f"{layer}.running_var"] = momentum * self.running[f"{layer}.running_var"] + (1.0 - momentum) * var


def _orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_params(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Square matrices orthogonal; everything else uniform with zero mean and `init_std` std.

    Layer-norm gain/bias start at 1/0 (0/1 with `literal_layer_norm_init`);
    batch-norm scale/shift start at 1/0 with running mean 0 and variance 1.
    """
    config.validate()
    bound = np.sqrt(3.0) * config.init_std
    weights: Dict[str, DenseArray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.split(".", 1)[1]
        if leaf in ("gamma", "beta"):
            start = 1.0 if (leaf == "gamma") != config.literal_layer_norm_init else 0.0
            values = np.full(shape, start)
        elif leaf == "scale":
            values = np.ones(shape)
        elif leaf == "shift":
            values = np.zeros(shape)
        elif len(shape) == 2 and shape[0] == shape[1]:
            values = _orthogonal(shape[0], rng)
        else:
            values = rng.uniform(-bound, bound, size=shape)
        weights[name] = DenseArray(values, requires_grad=True, name=name)
    running = {
        name: (np.zeros(shape) if name.endswith("running_mean") else np.ones(shape))
        for name, shape in running_shapes(config).items()
    }
    return EncoderParams(weights, running)


# ----------------------------------------------------------------------
# Recurrent core
# ----------------------------------------------------------------------

def _fused(params: EncoderParams, direction: str) -> Tuple[DenseArray, DenseArray, DenseArray]:
    w_x = concat([params[f"{direction}.W_{g}x"] for g in GATES], axis=1)
    w_h = concat([params[f"{direction}.W_{g}h"] for g in GATES], axis=1)
    b = concat([params[f"{direction}.b_{g}"] for g in GATES], axis=0)
    return w_x, w_h, b


def _cell_update(
    z: DenseArray, c_prev: DenseArray, params: EncoderParams, direction: str, config: EncoderConfig
) -> Tuple[DenseArray, DenseArray]:
    H = config.hidden_size
    f = sigmoid(take_slice(z, (slice(None), slice(0, H))))
    i = sigmoid(take_slice(z, (slice(None), slice(H, 2 * H))))
    o = sigmoid(take_slice(z, (slice(None), slice(2 * H, 3 * H))))
    candidate = tanh(take_slice(z, (slice(None), slice(3 * H, 4 * H))))
    c = f * c_prev + i * candidate
    if not config.layer_norm_enabled:
        return o * tanh(c), c
    m = reduce_mean(c, axis=-1, keepdims=True)
    centered = c - m
    v = sqrt(reduce_mean(centered * centered, axis=-1, keepdims=True))
    normalized = params[f"{direction}.gamma"] * (centered / (v + config.layer_norm_eps)) + params[f"{direction}.beta"]
    return o * tanh(normalized), c


def lnlstm_step(
    x_t: DenseArray | np.ndarray,
    h_prev: DenseArray | np.ndarray,
    c_prev: DenseArray | np.ndarray,
    params: EncoderParams,
    direction: str,
    config: EncoderConfig,
) -> Tuple[DenseArray, DenseArray]:
    """One layer-normalized LSTM step; inputs may be single vectors or row batches."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got '{direction}'")
    w_x, w_h, b = _fused(params, direction)
    x_t, h_prev, c_prev = (as_dense(v) for v in (x_t, h_prev, c_prev))
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t, h_prev, c_prev = (reshape(v, (1, v.size)) for v in (x_t, h_prev, c_prev))
    z = add_rows(matmul(x_t, w_x) + matmul(h_prev, w_h), b)
    h, c = _cell_update(z, c_prev, params, direction, config)
    if squeeze:
        h, c = reshape(h, (config.hidden_size,)), reshape(c, (config.hidden_size,))
    return h, c


def _unroll(frames: np.ndarray, params: EncoderParams, direction: str, config: EncoderConfig) -> List[DenseArray]:
    """Runs one direction over a (B, n, d) batch; returns n hidden states of shape (B, H)."""
    B, n, _ = frames.shape
    H = config.hidden_size
    w_x, w_h, b = _fused(params, direction)
    projected = matmul(frames, w_x) + b
    h = DenseArray(np.zeros((B, H)))
    c = DenseArray(np.zeros((B, H)))
    states: List[DenseArray] = []
    for t in range(n):
        z = take_slice(projected, (slice(None), t)) + matmul(h, w_h)
        h, c = _cell_update(z, c, params, direction, config)
        states.append(h)
    return states


def bilstm_batch(frames: np.ndarray, params: EncoderParams, config: EncoderConfig) -> DenseArray:
    """State tensor S of shape (B, n, 2H) for a batch of equal-length sequences."""
    forward_states = _unroll(frames, params, "fwd", config)
    backward_states = _unroll(frames[:, ::-1, :], params, "bwd", config)[::-1]
    return concat([stack(forward_states, axis=1), stack(backward_states, axis=1)], axis=2)


def bilstm(seq: MotionSequence, params: EncoderParams, config: EncoderConfig) -> DenseArray:
    """State matrix S (n x 2H): row t is [forward state at t, backward state at t]."""
    _check_dim(seq, config)
    S = bilstm_batch(seq.frames[None, :, :], params, config)
    return take_slice(S, 0)


def attend(S: DenseArray, params: EncoderParams, config: EncoderConfig) -> Tuple[DenseArray, DenseArray]:
    """Pools states (n x 2H, or B x n x 2H) into E (1 x 2H, or B x 2H) with per-frame scores A.

    r = W_s2^T tanh(W_s1 S^T); softmax mode uses A = softmax(r), paper_neglog
    mode uses A = -log softmax(r). Without attention A is uniform (mean pooling).
    """
    n = S.shape[-2]
    batched = S.ndim == 3
    if not config.attention_enabled:
        shape = S.shape[:-1]
        scores = DenseArray(np.full(shape, 1.0 / n))
    else:
        u = tanh(matmul(S, transpose(params["attn.W_s1"])))
        r = reshape(matmul(u, params["attn.W_s2"]), S.shape[:-1])
        if config.attention_mode == "softmax":
            scores = softmax(r, axis=-1)
        else:
            scores = logsumexp(r, axis=-1, keepdims=True) - r
    weights = reshape(scores, (S.shape[0], 1, n) if batched else (1, n))
    pooled = matmul(weights, S)
    pooled = reshape(pooled, (S.shape[0], S.shape[-1]) if batched else (1, S.shape[-1]))
    return pooled, scores


# ----------------------------------------------------------------------
# Head
# ----------------------------------------------------------------------

def _batch_norm(
    x: DenseArray,
    layer: str,
    params: EncoderParams,
    config: EncoderConfig,
    stats: Tuple[DenseArray, DenseArray] | None,
) -> DenseArray:
    if stats is None:
        mean = params.running[f"{layer}.running_mean"]
        var = params.running[f"{layer}.running_var"]
    else:
        mean, var = stats
    normalized = (x - mean) / sqrt(var + config.batch_norm_eps)
    return normalized * params[f"{layer}.scale"] + params[f"{layer}.shift"]


def _row_stats(x: DenseArray) -> Tuple[DenseArray, DenseArray]:
    mean = reduce_mean(x, axis=0)
    centered = x - mean
    return mean, reduce_mean(centered * centered, axis=0)


def draw_dropout_masks(config: EncoderConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """One inverted-dropout mask per dropout site, shared by every branch of an update."""
    keep = 1.0 - config.dropout_rate
    sizes = {"state": 2 * config.hidden_size, "fc1": config.fc_width}
    return {site: (rng.random(size) < keep).astype(np.float64) / keep for site, size in sizes.items()}


@dataclass
class EncodeResult:
    embeddings: DenseArray                          # (B, e), unit rows
    attention: List[np.ndarray]                     # per sequence, length n_i
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]]


def _check_dim(seq: MotionSequence, config: EncoderConfig) -> None:
    if seq.dim != config.input_dim:
        raise ShapeError("embed", [(seq.n_frames, seq.dim), (config.input_dim,)],
                         f"sequence '{seq.source_id}' dimension differs from encoder input_dim")


def _has_two_distinct(sequences: Sequence[MotionSequence]) -> bool:
    first = sequences[0].frames
    return any(s.frames.shape != first.shape or not np.array_equal(s.frames, first) for s in sequences[1:])


def encode_batch(
    sequences: Sequence[MotionSequence],
    params: EncoderParams,
    config: EncoderConfig,
    mode: str = "eval",
    dropout_masks: Dict[str, np.ndarray] | None = None,
) -> EncodeResult:
    """Embeds a batch with shared parameters.

    Train mode normalizes with batch statistics over the whole batch and applies
    the shared dropout masks; eval mode uses running statistics and no dropout.
    Train mode needs at least two distinct sequences.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
    if not sequences:
        raise ValueError("encode_batch needs at least one sequence")
    for seq in sequences:
        _check_dim(seq, config)
    train = mode == "train"
    if train and dropout_masks is None and config.dropout_rate > 0:
        raise ValueError("Train mode needs the update's shared dropout masks")
    if train and not _has_two_distinct(sequences):
        raise ValueError("Train mode needs at least two distinct sequences for batch statistics")
    masks = dropout_masks if train else None

    groups: Dict[int, List[int]] = defaultdict(list)
    for index, seq in enumerate(sequences):
        groups[seq.n_frames].append(index)
    order = sorted(groups)

    states: List[DenseArray] = []
    for length in order:
        frames = np.stack([sequences[i].frames for i in groups[length]])
        S = bilstm_batch(frames, params, config)
        if masks is not None:
            S = S * masks["state"]
        states.append(S)

    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    if config.state_batch_norm:
        stats = None
        if train:
            flat = [reshape(S, (S.shape[0] * S.shape[1], S.shape[2])) for S in states]
            stats = _row_stats(concat(flat, axis=0) if len(flat) > 1 else flat[0])
            batch_stats["bn0"] = (stats[0].values.copy(), stats[1].values.copy())
        states = [_batch_norm(S, "bn0", params, config, stats) for S in states]

    pooled_groups: List[DenseArray] = []
    attention: Dict[int, np.ndarray] = {}
    for length, S in zip(order, states):
        pooled, scores = attend(S, params, config)
        pooled_groups.append(pooled)
        for row, index in enumerate(groups[length]):
            attention[index] = scores.values[row].copy()

    permutation = np.concatenate([groups[length] for length in order])
    pooled = concat(pooled_groups, axis=0) if len(pooled_groups) > 1 else pooled_groups[0]
    if not np.array_equal(permutation, np.arange(len(sequences))):
        pooled = take_slice(pooled, np.argsort(permutation))

    def norm_layer(x: DenseArray, layer: str) -> DenseArray:
        stats = _row_stats(x) if train else None
        if stats is not None:
            batch_stats[layer] = (stats[0].values.copy(), stats[1].values.copy())
        return _batch_norm(x, layer, params, config, stats)

    x = relu(add_rows(matmul(pooled, params["fc1.W"]), params["fc1.b"]))
    if masks is not None:
        x = x * masks["fc1"]
    x = norm_layer(x, "bn1")
    x = relu(add_rows(matmul(x, params["fc2.W"]), params["fc2.b"]))
    x = norm_layer(x, "bn2")
    x = add_rows(matmul(x, params["fc3.W"]), params["fc3.b"])
    x = norm_layer(x, "bn3")
    embeddings = x / sqrt(clamp_min(sq_norm(x, axis=1, keepdims=True), 1e-24))

    return EncodeResult(embeddings, [attention[i] for i in range(len(sequences))], batch_stats)


def embed(
    seq: MotionSequence,
    params: EncoderParams,
    config: EncoderConfig,
    mode: str = "eval",
    dropout_masks: Dict[str, np.ndarray] | None = None,
) -> DenseArray:
    """Unit-norm embedding (e,) of a single sequence."""
    result = encode_batch([seq], params, config, mode=mode, dropout_masks=dropout_masks)
    return take_slice(result.embeddings, 0)


def embed_many(
    sequences: Sequence[MotionSequence],
    params: EncoderParams,
    config: EncoderConfig,
    batch_size: int = 64,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Eval-mode embeddings (N, e) and attention traces, computed without a tape."""
    embeddings: List[np.ndarray] = []
    attention: List[np.ndarray] = []
    for start in range(0, len(sequences), batch_size):
        result = encode_batch(sequences[start:start + batch_size], params, config, mode="eval")
        embeddings.append(result.embeddings.values)
        attention.extend(result.attention)
    logger.debug(f"Embedded {len(sequences)} sequences")
    return np.concatenate(embeddings, axis=0), attention
