# src/motion_metric/checkpoint.py

"""Versioned training checkpoints (numpy .npz with a JSON header)."""

import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict

import numpy as np

from .encoder import EncoderConfig, EncoderParams, param_shapes, running_shapes
from .errors import CheckpointError
from .logger_setup import get_logger
from .tensor import DenseArray
from .trainer import TrainState

logger = get_logger(__name__)

CHECKPOINT_VERSION = 1


def save_checkpoint(state: TrainState, path: Path) -> Path:
    """Writes params, velocity, running statistics, update index and rng state."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "update_index": state.update_index,
        "encoder_config": asdict(state.encoder_config),
        "rng_state": state.rng.bit_generator.state,
        "loss_history": state.loss_history,
        "shapes": {name: list(arr.shape) for name, arr in state.params.weights.items()},
    }
    arrays: Dict[str, np.ndarray] = {"header": np.array(json.dumps(header, sort_keys=True))}
    for name, arr in state.params.weights.items():
        arrays[f"param/{name}"] = arr.values
        arrays[f"velocity/{name}"] = state.velocity[name]
    for name, values in state.params.running.items():
        arrays[f"running/{name}"] = values
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info(f"Saved checkpoint at update {state.update_index} to {path}")
    return path


def _restore_rng(rng_state: Dict) -> np.random.Generator:
    bit_generator = getattr(np.random, rng_state["bit_generator"], None)
    if bit_generator is None:
        raise CheckpointError(f"Unknown bit generator '{rng_state['bit_generator']}'")
    generator = bit_generator()
    generator.state = rng_state
    return np.random.Generator(generator)


def load_checkpoint(path: Path, encoder_config: EncoderConfig | None = None) -> TrainState:
    """Restores a TrainState; validates the version and, when given, the expected encoder shapes.

    Raises:
        FileNotFoundError: If the file does not exist.
        CheckpointError: On version mismatch or the first parameter whose shape differs.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        contents = {key: data[key] for key in data.files}

    header = json.loads(str(contents.pop("header")))
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")

    stored_config = EncoderConfig(**header["encoder_config"])
    config = encoder_config or stored_config
    for name, shape in {**param_shapes(config), **running_shapes(config)}.items():
        key = f"running/{name}" if name.endswith(("running_mean", "running_var")) else f"param/{name}"
        if key not in contents:
            raise CheckpointError(f"Checkpoint has no '{name}' (expected shape {shape})")
        if tuple(contents[key].shape) != tuple(shape):
            raise CheckpointError(
                f"Shape mismatch for '{name}': checkpoint {tuple(contents[key].shape)}, encoder expects {tuple(shape)}"
            )

    weights = {
        name: DenseArray(contents[f"param/{name}"], requires_grad=True, name=name)
        for name in param_shapes(config)
    }
    running = {name: np.array(contents[f"running/{name}"]) for name in running_shapes(config)}
    velocity = {name: np.array(contents[f"velocity/{name}"]) for name in weights}
    state = TrainState(
        params=EncoderParams(weights, running),
        velocity=velocity,
        encoder_config=config,
        rng=_restore_rng(header["rng_state"]),
        update_index=int(header["update_index"]),
        loss_history=[float(v) for v in header.get("loss_history", [])],
    )
    logger.info(f"Loaded checkpoint from {path} at update {state.update_index}")
    return state
