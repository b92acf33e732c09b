# src/motion_metric/episodes.py

"""Episode sampling and the curriculum noise schedule."""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import EpisodeError
from .logger_setup import get_logger
from .motion import MotionSequence, group_by_label

logger = get_logger(__name__)


@dataclass
class Episode:
    """Anchor set, positive set (same label) and M negative sets (distinct labels)."""

    anchors: List[MotionSequence]
    positives: List[MotionSequence]
    negatives: List[List[MotionSequence]]
    positive_label: str = ""
    negative_labels: List[str] = field(default_factory=list)

    @property
    def P(self) -> int:
        return len(self.anchors)

    @property
    def M(self) -> int:
        return len(self.negatives)

    def sequences(self) -> List[MotionSequence]:
        """All sequences in layout order: anchors, positives, then each negative set."""
        flat = list(self.anchors) + list(self.positives)
        for negative_set in self.negatives:
            flat.extend(negative_set)
        return flat

    def layout(self) -> "EpisodeLayout":
        return EpisodeLayout(
            n_anchors=len(self.anchors),
            n_positives=len(self.positives),
            negative_sizes=tuple(len(s) for s in self.negatives),
        )

    def source_ids(self) -> List[str]:
        return [s.source_id for s in self.sequences()]


@dataclass(frozen=True)
class EpisodeLayout:
    """Row ranges of each set inside the stacked episode embedding matrix."""

    n_anchors: int
    n_positives: int
    negative_sizes: Tuple[int, ...]

    @property
    def anchor_rows(self) -> slice:
        return slice(0, self.n_anchors)

    @property
    def positive_rows(self) -> slice:
        return slice(self.n_anchors, self.n_anchors + self.n_positives)

    def negative_rows(self, j: int) -> slice:
        start = self.n_anchors + self.n_positives + sum(self.negative_sizes[:j])
        return slice(start, start + self.negative_sizes[j])

    @property
    def total(self) -> int:
        return self.n_anchors + self.n_positives + sum(self.negative_sizes)


def _draw(rng: np.random.Generator, pool: Sequence[MotionSequence], k: int) -> List[MotionSequence]:
    idx = rng.choice(len(pool), size=k, replace=len(pool) < k)
    return [pool[i] for i in idx]


def sample_episode(
    dataset: Mapping[str, Sequence[MotionSequence]] | Sequence[MotionSequence],
    P: int,
    M: int,
    rng: np.random.Generator,
    label_key: str = "category",
) -> Episode:
    """Draws one positive label with P anchors and P positives, and M distinct negative labels.

    Anchors and positives are disjoint when the positive label has at least 2P
    windows; otherwise both are drawn with replacement.

    Raises:
        EpisodeError: If fewer than M + 1 non-empty labels are available.
    """
    if P < 1 or M < 1:
        raise EpisodeError(f"P and M must be >= 1, got P={P}, M={M}")
    groups = dataset if isinstance(dataset, Mapping) else group_by_label(dataset, label_key)
    labels = sorted(label for label, members in groups.items() if len(members) > 0)
    if len(labels) < M + 1:
        raise EpisodeError(f"Episode needs {M + 1} labels with windows, dataset has {len(labels)}")

    chosen = rng.choice(len(labels), size=M + 1, replace=False)
    positive_label = labels[chosen[0]]
    negative_labels = [labels[i] for i in chosen[1:]]

    pool = groups[positive_label]
    if len(pool) >= 2 * P:
        idx = rng.choice(len(pool), size=2 * P, replace=False)
        anchors = [pool[i] for i in idx[:P]]
        positives = [pool[i] for i in idx[P:]]
    else:
        anchors = _draw(rng, pool, P)
        positives = [pool[i] for i in rng.choice(len(pool), size=P, replace=True)]

    negatives = [_draw(rng, groups[label], P) for label in negative_labels]
    return Episode(anchors, positives, negatives, positive_label, negative_labels)


@dataclass
class NoiseSchedule:
    """Linear ramp of the noise std from 0 to sigma_max, constant afterwards."""

    sigma_max: float = 0.05
    total_updates: int = 1000
    ramp_fraction: float = 0.8

    def __call__(self, update_index: int) -> float:
        if update_index < 0:
            raise ValueError(f"update_index must be >= 0, got {update_index}")
        if update_index == 0 or self.sigma_max == 0:
            return 0.0
        ramp = self.ramp_fraction * self.total_updates
        if ramp <= 0:
            return float(self.sigma_max)
        return float(self.sigma_max * min(1.0, update_index / ramp))


def add_curriculum_noise(
    seq: MotionSequence,
    update_index: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> MotionSequence:
    """Adds i.i.d. zero-mean Gaussian noise with std schedule(update_index) to every feature."""
    std = schedule(update_index)
    if std == 0.0:
        return seq
    # Noisy axis-angle triples may leave the pi ball, so the copy is tagged generic.
    return seq.with_frames(seq.frames + rng.normal(0.0, std, size=seq.frames.shape), layout="generic")
