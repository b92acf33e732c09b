# src/motion_metric/synthetic.py

"""Synthetic sinusoidal motion classes for desk-scale experiments."""

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import yaml

from .errors import ConfigError
from .logger_setup import get_logger
from .motion import MotionSequence

logger = get_logger(__name__)


@dataclass(frozen=True)
class DiscriminativeSegment:
    start: float
    end: float
    boost: float
    frequency: float | None = None  # falls back to each joint's own frequency


@dataclass(frozen=True)
class SyntheticClassSpec:
    """Generator parameters for one synthetic motion class.

    Coordinate c of joint k at frame j is
    amplitude_k * sin(2*pi*frequency_k*j/rate + phase_k + jitter + 2*pi*c/3),
    with amplitude raised by `boost` (and the frequency optionally replaced)
    inside the discriminative segment, plus Gaussian noise.
    """

    name: str
    joint_count: int
    amplitudes: Tuple[float, ...]
    frequencies: Tuple[float, ...]
    phases: Tuple[float, ...]
    length_range: Tuple[int, int] = (60, 120)
    noise_std: float = 0.0
    phase_jitter: float = 0.5
    frame_rate_hz: float = 30.0
    subjects: int = 1
    discriminative_segment: DiscriminativeSegment | None = None

    def __post_init__(self) -> None:
        for attr in ("amplitudes", "frequencies", "phases"):
            if len(getattr(self, attr)) != self.joint_count:
                raise ConfigError(f"{self.name}.{attr}", f"needs {self.joint_count} entries")
        low, high = self.length_range
        if low < 10 or high < low:
            raise ConfigError(f"{self.name}.length_range", f"need 10 <= min <= max, got {self.length_range}")
        if any(f <= 0 for f in self.frequencies):
            raise ConfigError(f"{self.name}.frequencies", "all frequencies must be positive")
        if self.noise_std < 0:
            raise ConfigError(f"{self.name}.noise_std", "must be non-negative")
        segment = self.discriminative_segment
        if segment is not None and not 0.0 <= segment.start < segment.end <= 1.0:
            raise ConfigError(f"{self.name}.discriminative_segment", "need 0 <= start < end <= 1")

    @property
    def dim(self) -> int:
        return 3 * self.joint_count


def generate_synthetic(spec: SyntheticClassSpec, count: int, seed: Any) -> List[MotionSequence]:
    """Draws `count` sequences of one class; deterministic given `seed`."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    amplitudes = np.asarray(spec.amplitudes)[:, None]
    frequencies = np.asarray(spec.frequencies)[:, None]
    phases = np.asarray(spec.phases)[:, None]
    coordinate_shift = 2.0 * np.pi * np.arange(3)[None, :] / 3.0
    segment = spec.discriminative_segment

    sequences: List[MotionSequence] = []
    for i in range(count):
        n = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        jitter = rng.uniform(-spec.phase_jitter, spec.phase_jitter)
        t = np.arange(n)[:, None, None] / spec.frame_rate_hz
        offset = phases + jitter + coordinate_shift
        frames = amplitudes * np.sin(2.0 * np.pi * frequencies * t + offset)
        if segment is not None:
            lo, hi = int(np.floor(segment.start * n)), int(np.ceil(segment.end * n))
            seg_freq = frequencies if segment.frequency is None else segment.frequency
            boosted = (amplitudes + segment.boost) * np.sin(2.0 * np.pi * seg_freq * t[lo:hi] + offset)
            frames[lo:hi] = boosted
        frames = frames.reshape(n, spec.dim)
        if spec.noise_std > 0:
            frames = frames + rng.normal(0.0, spec.noise_std, size=frames.shape)
        subject = int(rng.integers(spec.subjects))
        sequences.append(MotionSequence(
            frames=frames,
            frame_rate_hz=spec.frame_rate_hz,
            category_label=spec.name,
            subject_label=f"subject{subject:02d}",
            source_id=f"{spec.name}-{i:04d}",
        ))
    return sequences


def _per_joint(value: Any, joint_count: int, field_name: str) -> Tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * joint_count
    values = tuple(float(v) for v in value)
    if len(values) != joint_count:
        raise ConfigError(field_name, f"expected a scalar or {joint_count} values, got {len(values)}")
    return values


def spec_from_dict(record: Dict[str, Any], defaults: Dict[str, Any] | None = None) -> SyntheticClassSpec:
    merged = {**(defaults or {}), **record}
    if "name" not in merged:
        raise ConfigError("synthetic.classes", "every class needs a 'name'")
    name = str(merged["name"])
    joint_count = int(merged.get("joint_count", 8))
    segment = merged.get("discriminative_segment")
    if segment is not None:
        segment = DiscriminativeSegment(
            start=float(segment["start"]),
            end=float(segment["end"]),
            boost=float(segment.get("boost", 0.0)),
            frequency=None if segment.get("frequency") is None else float(segment["frequency"]),
        )
    return SyntheticClassSpec(
        name=name,
        joint_count=joint_count,
        amplitudes=_per_joint(merged.get("amplitudes", 0.5), joint_count, f"{name}.amplitudes"),
        frequencies=_per_joint(merged.get("frequencies", 1.0), joint_count, f"{name}.frequencies"),
        phases=_per_joint(merged.get("phases", 0.0), joint_count, f"{name}.phases"),
        length_range=tuple(int(v) for v in merged.get("length_range", (60, 120))),
        noise_std=float(merged.get("noise_std", 0.0)),
        phase_jitter=float(merged.get("phase_jitter", 0.5)),
        frame_rate_hz=float(merged.get("frame_rate_hz", 30.0)),
        subjects=int(merged.get("subjects", 1)),
        discriminative_segment=segment,
    )


def load_synthetic_specs(spec_path: Path) -> Tuple[List[SyntheticClassSpec], int]:
    """Reads a YAML spec file; returns the class specs and the per-class sample count."""
    if not spec_path.is_file():
        raise FileNotFoundError(f"Synthetic spec file not found: {spec_path}")
    with open(spec_path, "r", encoding="utf-8") as f:
        document = yaml.safe_load(f) or {}
    defaults = document.get("defaults", {})
    classes = document.get("classes", [])
    if not classes:
        raise ConfigError("synthetic.classes", f"no classes declared in {spec_path}")
    specs = [spec_from_dict(record, defaults) for record in classes]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("synthetic.classes", "class names must be unique")
    logger.info(f"Loaded {len(specs)} synthetic class specs from {spec_path}")
    return specs, int(document.get("samples_per_class", 40))


def generate_benchmark(
    specs: Sequence[SyntheticClassSpec],
    samples_per_class: int,
    seed: int,
    probe_count: int = 0,
) -> List[MotionSequence]:
    """Generates every class with independent child seeds; optionally runs the DTW probe check."""
    children = np.random.SeedSequence(seed).spawn(len(specs))
    dataset: List[MotionSequence] = []
    for spec, child in zip(specs, children):
        dataset.extend(generate_synthetic(spec, samples_per_class, child))
    if probe_count > 0:
        check_separability(specs, probe_count, seed)
    logger.info(f"Generated {len(dataset)} synthetic sequences over {len(specs)} classes")
    return dataset


def check_separability(specs: Sequence[SyntheticClassSpec], probe_count: int = 20, seed: int = 0) -> Dict[Tuple[str, str], Tuple[float, float]]:
    """Compares mean within-class and cross-class DTW on freshly drawn probes.

    Returns:
        Dict[Tuple[str, str], Tuple[float, float]]: For each spec pair, the mean
        within-class DTW (averaged over both classes) and the mean cross-class DTW.
        A WARNING is logged for every pair whose cross-class mean does not exceed
        the within-class mean.
    """
    from .baselines import dtw_distance

    probe_seeds = np.random.SeedSequence([seed, 7919]).spawn(len(specs))
    probes = {spec.name: generate_synthetic(spec, probe_count, s) for spec, s in zip(specs, probe_seeds)}

    def mean_dtw(xs: Sequence[MotionSequence], ys: Sequence[MotionSequence] | None) -> float:
        if ys is None:
            pairs = list(combinations(xs, 2))
        else:
            pairs = [(x, y) for x in xs for y in ys]
        return float(np.mean([dtw_distance(x, y)[0] for x, y in pairs])) if pairs else 0.0

    within = {name: mean_dtw(members, None) for name, members in probes.items()}
    results: Dict[Tuple[str, str], Tuple[float, float]] = {}
    for a, b in combinations(sorted(probes), 2):
        inside = 0.5 * (within[a] + within[b])
        across = mean_dtw(probes[a], probes[b])
        results[(a, b)] = (inside, across)
        if across <= inside:
            logger.warning(f"Synthetic classes '{a}' and '{b}' are not DTW-separable: within {inside:.3f} >= cross {across:.3f}")
    return results
