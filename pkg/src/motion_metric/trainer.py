# src/motion_metric/trainer.py

"""Episode-based training: SGD with momentum, step-decayed learning rate, gradient clipping."""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .encoder import EncoderConfig, EncoderParams, draw_dropout_masks, encode_batch, init_params
from .episodes import Episode, NoiseSchedule, add_curriculum_noise, sample_episode
from .errors import ConfigError, NonFiniteError, ShapeError
from .logger_setup import get_logger
from .losses import LossConfig, episode_loss
from .motion import MotionSequence
from .tensor import backward, recording

logger = get_logger(__name__)

CLIP_MODES = ("global", "elementwise")


@dataclass
class TrainConfig:
    total_updates: int = 5000
    lr0: float = 0.0001
    decay_rate: float = 0.96
    decay_every: int = 50
    momentum: float = 0.9
    clip_norm: float = 25.0
    clip_mode: str = "global"
    samples_per_class: int = 25
    negative_classes: int = 5
    noise_sigma_max: float = 0.05
    noise_ramp_fraction: float = 0.8
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    deterministic_log: bool = False

    def validate(self) -> None:
        if self.total_updates < 1:
            raise ConfigError("train.total_updates", "must be >= 1")
        for name in ("lr0", "decay_rate", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name}", "must be positive")
        if self.decay_every < 1:
            raise ConfigError("train.decay_every", "must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("train.momentum", "must be in [0, 1)")
        if self.clip_mode not in CLIP_MODES:
            raise ConfigError("train.clip_mode", f"expected one of {CLIP_MODES}")
        if self.samples_per_class < 1:
            raise ConfigError("train.samples_per_class", "P must be >= 1")
        if self.negative_classes < 1:
            raise ConfigError("train.negative_classes", "M must be >= 1")
        if self.noise_sigma_max < 0:
            raise ConfigError("train.noise_sigma_max", "must be non-negative")
        if not 0.0 <= self.noise_ramp_fraction <= 1.0:
            raise ConfigError("train.noise_ramp_fraction", "must be in [0, 1]")

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.noise_sigma_max, self.total_updates, self.noise_ramp_fraction)


@dataclass
class TrainState:
    params: EncoderParams
    velocity: Dict[str, np.ndarray]
    encoder_config: EncoderConfig
    rng: np.random.Generator
    update_index: int = 0
    loss_history: List[float] = field(default_factory=list)


@dataclass
class StepRecord:
    """One line of the training log."""

    update_index: int
    lr: float
    loss: float
    grad_norm_pre_clip: float
    grad_norm_post_clip: float
    noise_std: float
    wall_time_s: float


def new_train_state(encoder_config: EncoderConfig, seed: int) -> TrainState:
    rng = np.random.default_rng(seed)
    params = init_params(encoder_config, rng)
    velocity = {name: np.zeros_like(arr.values) for name, arr in params.weights.items()}
    return TrainState(params=params, velocity=velocity, encoder_config=encoder_config, rng=rng)


def lr_at(update_index: int, config: TrainConfig) -> float:
    """lr0 * decay_rate ** floor(update_index / decay_every)."""
    if update_index < 0:
        raise ValueError(f"update_index must be >= 0, got {update_index}")
    return config.lr0 * config.decay_rate ** (update_index // config.decay_every)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient in '{name}'")
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global(grads: Mapping[str, np.ndarray], clip_norm: float) -> Dict[str, np.ndarray]:
    """Scales every gradient by clip_norm / g when the joint norm g exceeds clip_norm."""
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads)
    factor = clip_norm / norm
    return {name: g * factor for name, g in grads.items()}


def clip_elementwise(grads: Mapping[str, np.ndarray], limit: float) -> Dict[str, np.ndarray]:
    global_norm(grads)
    return {name: np.clip(g, -limit, limit) for name, g in grads.items()}


def sgd_momentum_step(state: TrainState, grads: Mapping[str, np.ndarray], lr: float, momentum: float) -> TrainState:
    """Classical momentum: v <- momentum * v + g, then p <- p - lr * v."""
    for name, arr in state.params.weights.items():
        grad = grads[name]
        if grad.shape != arr.shape:
            raise ShapeError("sgd_momentum_step", [arr.shape, grad.shape], f"gradient of '{name}'")
        velocity = momentum * state.velocity[name] + grad
        state.velocity[name] = velocity
        arr.values = arr.values - lr * velocity
    return state


def train_step(
    state: TrainState,
    episode: Episode,
    loss_config: LossConfig,
    train_config: TrainConfig,
    noise_schedule: NoiseSchedule | None = None,
) -> Tuple[TrainState, float, StepRecord]:
    """One update: noise, shared dropout mask, forward, backward, clip, momentum step.

    Raises:
        NonFiniteError: If the loss is not finite; the message lists the episode's source ids.
    """
    started = time.perf_counter()
    schedule = noise_schedule or train_config.noise_schedule()
    encoder_config = state.encoder_config
    noise_std = schedule(state.update_index)
    inputs = [add_curriculum_noise(s, state.update_index, schedule, state.rng) for s in episode.sequences()]
    masks = draw_dropout_masks(encoder_config, state.rng)

    state.params.zero_grad()
    with recording():
        result = encode_batch(inputs, state.params, encoder_config, mode="train", dropout_masks=masks)
        loss = episode_loss(loss_config, result.embeddings, episode.layout())
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NonFiniteError(
                f"Loss became {loss_value} at update {state.update_index}; episode: {', '.join(episode.source_ids())}"
            )
        backward(loss)

    grads = state.params.grads()
    pre_norm = global_norm(grads)
    if train_config.clip_mode == "elementwise":
        grads = clip_elementwise(grads, train_config.clip_norm)
    else:
        grads = clip_global(grads, train_config.clip_norm)
    post_norm = global_norm(grads)

    lr = lr_at(state.update_index, train_config)
    sgd_momentum_step(state, grads, lr, train_config.momentum)
    state.params.update_running_stats(result.batch_stats, encoder_config.batch_norm_momentum)
    state.params.zero_grad()

    record = StepRecord(
        update_index=state.update_index,
        lr=lr,
        loss=loss_value,
        grad_norm_pre_clip=pre_norm,
        grad_norm_post_clip=post_norm,
        noise_std=noise_std,
        wall_time_s=0.0 if train_config.deterministic_log else time.perf_counter() - started,
    )
    state.update_index += 1
    state.loss_history.append(loss_value)
    return state, loss_value, record


def append_log_record(log_path: Path, record: StepRecord) -> None:
    with open(log_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(asdict(record)) + "\n")


def train(
    state: TrainState,
    groups: Mapping[str, Sequence[MotionSequence]],
    loss_config: LossConfig,
    train_config: TrainConfig,
    out_dir: Path | None = None,
) -> TrainState:
    """Runs updates until `train_config.total_updates`, resuming from `state.update_index`.

    Writes one JSON line per update to `training_log.jsonl` and periodic
    checkpoints under `checkpoints/` when `out_dir` is given.
    """
    from .checkpoint import save_checkpoint

    train_config.validate()
    loss_config.validate()
    schedule = train_config.noise_schedule()
    log_path = out_dir / "training_log.jsonl" if out_dir else None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)

    if state.update_index >= train_config.total_updates:
        logger.info(f"Nothing to train: state is at update {state.update_index} of {train_config.total_updates}")
        return state
    logger.info(
        f"Training from update {state.update_index} to {train_config.total_updates} "
        f"({loss_config.loss_kind}, P={train_config.samples_per_class}, M={train_config.negative_classes})"
    )
    while state.update_index < train_config.total_updates:
        episode = sample_episode(groups, train_config.samples_per_class, train_config.negative_classes, state.rng)
        state, loss_value, record = train_step(state, episode, loss_config, train_config, schedule)
        logger.debug(f"update {record.update_index}: loss {loss_value:.6f}, grad norm {record.grad_norm_pre_clip:.4f}")
        if log_path is not None:
            append_log_record(log_path, record)
        if state.update_index % train_config.log_every == 0:
            window = state.loss_history[-train_config.log_every:]
            logger.info(f"Update {state.update_index}/{train_config.total_updates}: mean loss {np.mean(window):.6f}, lr {record.lr:.3e}")
        if out_dir is not None and train_config.checkpoint_every > 0 and state.update_index % train_config.checkpoint_every == 0:
            save_checkpoint(state, out_dir / "checkpoints" / f"checkpoint_{state.update_index:06d}.npz")
    logger.info(f"Training finished at update {state.update_index}")
    return state
