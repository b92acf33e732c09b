# src/motion_metric/motion.py

"""Motion sequences, preprocessing, windowing and dataset manifests."""

import dataclasses
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .bvh import SkeletonHierarchy, parse_bvh
from .errors import ConfigError, EvaluationError
from .logger_setup import get_logger
from .rotations import euler_to_expmap, remove_yaw

logger = get_logger(__name__)

EXPMAP_NORM_LIMIT = np.pi + 1e-9


@dataclass(frozen=True)
class MotionSequence:
    """A variable-length sequence of fixed-dimension pose frames with labels."""

    frames: np.ndarray
    frame_rate_hz: float
    category_label: str
    subject_label: str | None = None
    source_id: str = ""
    layout: str = "generic"  # 'expmap' when every coordinate triple is an axis-angle vector

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a non-empty (n, d) array, got shape {frames.shape}")
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")
        if self.layout == "expmap":
            if frames.shape[1] % 3:
                raise ValueError(f"expmap frames need a multiple of 3 coordinates, got {frames.shape[1]}")
            norms = np.linalg.norm(frames.reshape(frames.shape[0], -1, 3), axis=2)
            if np.any(norms > EXPMAP_NORM_LIMIT):
                raise ValueError(f"expmap rotation norm {float(norms.max()):.6f} exceeds pi in {self.source_id}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_frames / self.frame_rate_hz

    def label(self, label_key: str = "category") -> str:
        if label_key == "category":
            return self.category_label
        if label_key == "subject":
            if self.subject_label is None:
                raise EvaluationError(f"Sequence '{self.source_id}' has no subject label")
            return self.subject_label
        raise ConfigError("label_key", f"expected 'category' or 'subject', got '{label_key}'")

    def with_frames(self, frames: np.ndarray, **changes: Any) -> "MotionSequence":
        return dataclasses.replace(self, frames=frames, **changes)


@dataclass
class PreprocessConfig:
    target_rate_hz: float = 30.0
    drop_root_translation: bool = True
    remove_root_yaw: bool = False
    rate_tolerance: float = 1e-3


def preprocess(seq: MotionSequence, skeleton: SkeletonHierarchy, config: PreprocessConfig) -> MotionSequence:
    """Converts raw BVH channels to torso-aligned exponential-map frames at the target rate.

    Args:
        seq (MotionSequence): Raw channel sequence as produced by `parse_bvh`.
        skeleton (SkeletonHierarchy): Hierarchy describing the channel layout.
        config (PreprocessConfig): Target rate and alignment options.

    Returns:
        MotionSequence: Frames of dimension 3 x (joints with rotation channels).

    Raises:
        ConfigError: If the target rate exceeds the source rate or the stride is not integral.
    """
    if seq.dim != skeleton.total_channels:
        raise ValueError(f"Sequence has {seq.dim} channels but skeleton declares {skeleton.total_channels}")
    stride = decimation_stride(seq.frame_rate_hz, config.target_rate_hz, config.rate_tolerance)

    blocks: List[np.ndarray] = []
    offset = 0
    for joint_index, joint in enumerate(skeleton.joints):
        channels = list(joint.channels)
        columns = {name: offset + k for k, name in enumerate(channels)}
        offset += len(channels)
        position = [c for c in channels if c.endswith("position")]
        rotation = [c for c in channels if c.endswith("rotation")]
        if position and joint_index == 0 and not config.drop_root_translation:
            blocks.append(seq.frames[:, [columns[c] for c in position]])
        if not rotation:
            continue
        if len(rotation) != 3:
            raise ValueError(f"Joint '{joint.name}' has {len(rotation)} rotation channels; expected 3")
        angles = seq.frames[:, [columns[c] for c in rotation]]
        expmap = euler_to_expmap(angles, rotation)
        if joint_index == 0 and config.remove_root_yaw:
            expmap = remove_yaw(expmap)
        blocks.append(expmap)

    frames = np.concatenate(blocks, axis=1)[::stride]
    layout = "expmap" if config.drop_root_translation else "generic"
    logger.debug(f"Preprocessed '{seq.source_id}': {seq.n_frames} -> {frames.shape[0]} frames, d={frames.shape[1]}")
    return seq.with_frames(frames, frame_rate_hz=seq.frame_rate_hz / stride, layout=layout)


def decimation_stride(source_rate_hz: float, target_rate_hz: float, tolerance: float = 1e-3) -> int:
    """Integer stride taking `source_rate_hz` to `target_rate_hz`."""
    if target_rate_hz > source_rate_hz * (1.0 + tolerance):
        raise ConfigError("target_rate_hz", f"target rate {target_rate_hz} Hz exceeds source rate {source_rate_hz} Hz")
    ratio = source_rate_hz / target_rate_hz
    stride = max(1, int(round(ratio)))
    if abs(ratio - stride) > tolerance * ratio:
        raise ConfigError("target_rate_hz", f"source rate {source_rate_hz} Hz is not an integer multiple of {target_rate_hz} Hz")
    return stride


def window(
    seq: MotionSequence,
    window_len: int,
    gap: int,
    mode: str = "train",
    min_split_seconds: float = 5.0,
    test_gap_seconds: float = 1.0,
    stride_mode: str = "gapped",
) -> List[MotionSequence]:
    """Cuts a sequence into training windows or test pieces.

    Train mode emits windows of exactly `window_len` frames, starting every
    `window_len + gap` frames ('gapped') or every `gap` frames ('overlap'), and
    drops the trailing partial window. Test mode keeps sequences no longer than
    `min_split_seconds`; longer ones are cut into `min_split_seconds` pieces
    separated by `test_gap_seconds`, keeping a trailing remainder of at least
    one second.
    """
    if window_len < 1:
        raise ConfigError("window_len", f"must be >= 1, got {window_len}")
    if gap < 0:
        raise ConfigError("gap", f"must be >= 0, got {gap}")

    if mode == "train":
        if stride_mode == "gapped":
            stride = window_len + gap
        elif stride_mode == "overlap":
            stride = max(1, gap)
        else:
            raise ConfigError("stride_mode", f"expected 'gapped' or 'overlap', got '{stride_mode}'")
        starts = range(0, seq.n_frames - window_len + 1, stride)
        return [_cut(seq, start, start + window_len, k) for k, start in enumerate(starts)]

    if mode != "test":
        raise ConfigError("mode", f"expected 'train' or 'test', got '{mode}'")
    if seq.duration_seconds <= min_split_seconds:
        return [seq]
    piece_len = max(1, int(round(min_split_seconds * seq.frame_rate_hz)))
    test_gap = int(round(test_gap_seconds * seq.frame_rate_hz))
    min_tail = max(1, int(round(seq.frame_rate_hz)))
    pieces: List[MotionSequence] = []
    start = 0
    while start < seq.n_frames:
        stop = min(start + piece_len, seq.n_frames)
        if stop - start == piece_len or stop - start >= min_tail:
            pieces.append(_cut(seq, start, stop, len(pieces)))
        start += piece_len + test_gap
    return pieces


def _cut(seq: MotionSequence, start: int, stop: int, k: int) -> MotionSequence:
    return seq.with_frames(seq.frames[start:stop], source_id=f"{seq.source_id}#w{k}")


def window_dataset(sequences: Iterable[MotionSequence], mode: str, **window_kwargs: Any) -> List[MotionSequence]:
    windows: List[MotionSequence] = []
    for seq in sequences:
        windows.extend(window(seq, mode=mode, **window_kwargs))
    return windows


def drop_static_joints(
    sequences: Sequence[MotionSequence], threshold: float = 1e-10
) -> Tuple[List[MotionSequence], List[int]]:
    """Drops joints whose three coordinates never vary across the whole set.

    Returns:
        Tuple[List[MotionSequence], List[int]]: Reduced sequences and the indices of kept joints.
    """
    if not sequences:
        return [], []
    stacked = np.concatenate([s.frames for s in sequences], axis=0)
    if stacked.shape[1] % 3:
        raise ValueError("Static-joint detection needs frames made of coordinate triples")
    variance = stacked.var(axis=0).reshape(-1, 3)
    kept = [j for j in range(variance.shape[0]) if np.any(variance[j] >= threshold)]
    dropped = variance.shape[0] - len(kept)
    if dropped:
        logger.info(f"Dropping {dropped} static joint(s) with channel variance below {threshold}")
    columns = [3 * j + c for j in kept for c in range(3)]
    return [s.with_frames(s.frames[:, columns]) for s in sequences], kept


def group_by_label(sequences: Iterable[MotionSequence], label_key: str = "category") -> Dict[str, List[MotionSequence]]:
    groups: Dict[str, List[MotionSequence]] = defaultdict(list)
    for seq in sequences:
        groups[seq.label(label_key)].append(seq)
    return dict(sorted(groups.items()))


def filter_min_sequences(sequences: Sequence[MotionSequence], label_key: str, min_count: int) -> List[MotionSequence]:
    """Keeps only label classes with at least `min_count` sequences."""
    groups = group_by_label(sequences, label_key)
    kept = {label for label, members in groups.items() if len(members) >= min_count}
    if len(kept) < len(groups):
        logger.info(f"Filtered {len(groups) - len(kept)} label(s) with fewer than {min_count} sequences")
    return [s for s in sequences if s.label(label_key) in kept]


def split_by_label(
    sequences: Sequence[MotionSequence],
    label_key: str = "category",
    train_fraction: float = 0.5,
    seed: int = 0,
    train_labels: Sequence[str] | None = None,
) -> Tuple[List[MotionSequence], List[MotionSequence]]:
    """Splits a dataset into disjoint train/test label sets (test labels are unseen)."""
    labels = sorted(group_by_label(sequences, label_key))
    if train_labels is None:
        rng = np.random.default_rng(seed)
        order = list(rng.permutation(len(labels)))
        n_train = int(round(train_fraction * len(labels)))
        chosen = {labels[i] for i in order[:n_train]}
    else:
        chosen = set(train_labels)
    train = [s for s in sequences if s.label(label_key) in chosen]
    test = [s for s in sequences if s.label(label_key) not in chosen]
    logger.info(f"Split {len(labels)} labels into {len(chosen)} train / {len(labels) - len(chosen)} unseen test")
    return train, test


def split_hash(train: Sequence[MotionSequence], test: Sequence[MotionSequence]) -> str:
    """SHA-256 over the sorted source ids of both splits."""
    digest = hashlib.sha256()
    for name, part in (("train", train), ("test", test)):
        digest.update(name.encode("utf-8"))
        for source_id in sorted(s.source_id for s in part):
            digest.update(source_id.encode("utf-8"))
            digest.update(b"\n")
    return digest.hexdigest()


def load_manifest(manifest_path: Path, preprocess_config: PreprocessConfig | None = None) -> List[MotionSequence]:
    """Loads a line-delimited JSON manifest.

    Each record carries either 'path' (a BVH file, relative to the manifest) or
    inline 'frames', plus 'category_label', optional 'subject_label',
    'frame_rate_hz' and 'source_id'. BVH records are preprocessed.
    """
    preprocess_config = preprocess_config or PreprocessConfig()
    sequences: List[MotionSequence] = []
    logger.info(f"Loading dataset manifest {manifest_path}...")
    with open(manifest_path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError("manifest", f"line {line_number}: {e}") from e
            if "category_label" not in record:
                raise ConfigError("manifest", f"line {line_number}: missing 'category_label'")
            source_id = record.get("source_id") or record.get("path") or f"{manifest_path.stem}:{line_number}"
            subject = record.get("subject_label")
            subject = None if subject is None else str(subject)
            if "path" in record:
                bvh_path = (manifest_path.parent / record["path"]).resolve()
                skeleton, raw = parse_bvh(bvh_path.read_text(encoding="utf-8"))
                raw = dataclasses.replace(raw, category_label=str(record["category_label"]),
                                          subject_label=subject, source_id=source_id)
                sequences.append(preprocess(raw, skeleton, preprocess_config))
            elif "frames" in record:
                sequences.append(MotionSequence(
                    frames=np.asarray(record["frames"], dtype=np.float64),
                    frame_rate_hz=float(record.get("frame_rate_hz", preprocess_config.target_rate_hz)),
                    category_label=str(record["category_label"]),
                    subject_label=subject,
                    source_id=source_id,
                ))
            else:
                raise ConfigError("manifest", f"line {line_number}: record needs 'path' or 'frames'")
    logger.info(f"Loaded {len(sequences)} sequences from {manifest_path}")
    return sequences


def save_manifest(sequences: Iterable[MotionSequence], manifest_path: Path) -> None:
    """Writes sequences with inline frames as a line-delimited JSON manifest."""
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as f:
        for seq in sequences:
            record = {
                "source_id": seq.source_id,
                "category_label": seq.category_label,
                "subject_label": seq.subject_label,
                "frame_rate_hz": seq.frame_rate_hz,
                "frames": seq.frames.tolist(),
            }
            f.write(json.dumps(record) + "\n")
