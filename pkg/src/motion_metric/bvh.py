# src/motion_metric/bvh.py

"""Minimal BVH reader/writer (HIERARCHY + MOTION, position and rotation channels)."""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Sequence, Tuple

import numpy as np

from .errors import BvhParseError
from .logger_setup import get_logger

if TYPE_CHECKING:
    from .motion import MotionSequence

logger = get_logger(__name__)

SUPPORTED_CHANNELS = frozenset({
    "Xposition", "Yposition", "Zposition",
    "Xrotation", "Yrotation", "Zrotation",
})


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: Tuple[float, float, float]
    channels: Tuple[str, ...]
    end_site: Tuple[float, float, float] | None = None


@dataclass(frozen=True)
class SkeletonHierarchy:
    """Joints in topological order (every parent precedes its children)."""

    joints: Tuple[Joint, ...]

    def __post_init__(self) -> None:
        if not self.joints:
            raise ValueError("A skeleton needs at least one joint")
        if self.joints[0].parent is not None:
            raise ValueError("The root joint must not have a parent")
        for i, joint in enumerate(self.joints[1:], start=1):
            if joint.parent is None or not 0 <= joint.parent < i:
                raise ValueError(f"Joint '{joint.name}' at index {i} has invalid parent {joint.parent}")

    @property
    def total_channels(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    def children(self, index: int) -> List[int]:
        return [i for i, j in enumerate(self.joints) if j.parent == index]


def _tokenize(lines: Sequence[str]) -> List[Tuple[str, int]]:
    tokens: List[Tuple[str, int]] = []
    for line_number, line in enumerate(lines, start=1):
        tokens.extend((tok, line_number) for tok in line.split())
    return tokens


def _float(token: str, line_number: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise BvhParseError(f"non-numeric {what} '{token}'", line_number) from None


def _parse_hierarchy(lines: Sequence[str]) -> Tuple[SkeletonHierarchy, int]:
    """Parses joints up to the MOTION keyword; returns the hierarchy and the MOTION line index."""
    tokens = _tokenize(lines)
    if not tokens or tokens[0][0] != "HIERARCHY":
        raise BvhParseError("missing HIERARCHY section", tokens[0][1] if tokens else 1)

    joints: List[Dict] = []
    stack: List[int | None] = []  # None marks an End Site block
    pos = 1

    def take(expected: str | None = None) -> Tuple[str, int]:
        nonlocal pos
        if pos >= len(tokens):
            raise BvhParseError("unexpected end of file inside HIERARCHY", tokens[-1][1])
        tok = tokens[pos]
        pos += 1
        if expected is not None and tok[0] != expected:
            raise BvhParseError(f"expected '{expected}', found '{tok[0]}'", tok[1])
        return tok

    while True:
        if pos >= len(tokens):
            raise BvhParseError("missing MOTION section", tokens[-1][1])
        tok, line_number = take()
        if tok == "MOTION":
            if stack:
                raise BvhParseError("unbalanced braces before MOTION", line_number)
            break
        if tok in ("ROOT", "JOINT"):
            if tok == "ROOT" and joints:
                raise BvhParseError("only one ROOT is supported", line_number)
            if tok == "JOINT" and (not stack or stack[-1] is None):
                raise BvhParseError("JOINT outside a joint block", line_number)
            name, _ = take()
            take("{")
            parent = stack[-1] if stack else None
            joints.append({"name": name, "parent": parent, "offset": (0.0, 0.0, 0.0), "channels": (), "end_site": None})
            stack.append(len(joints) - 1)
        elif tok == "End":
            take("Site")
            take("{")
            if not stack or stack[-1] is None:
                raise BvhParseError("End Site outside a joint block", line_number)
            joints[stack[-1]]["end_site"] = (0.0, 0.0, 0.0)
            stack.append(None)
        elif tok == "OFFSET":
            offset = tuple(_float(take()[0], line_number, "OFFSET value") for _ in range(3))
            if not stack:
                raise BvhParseError("OFFSET outside a joint block", line_number)
            if stack[-1] is None:
                joints[stack[-2]]["end_site"] = offset
            else:
                joints[stack[-1]]["offset"] = offset
        elif tok == "CHANNELS":
            count_tok, _ = take()
            if not count_tok.isdigit():
                raise BvhParseError(f"invalid channel count '{count_tok}'", line_number)
            names = tuple(take()[0] for _ in range(int(count_tok)))
            unsupported = [n for n in names if n not in SUPPORTED_CHANNELS]
            if unsupported:
                raise BvhParseError(f"unsupported channel(s) {unsupported}", line_number)
            if not stack or stack[-1] is None:
                raise BvhParseError("CHANNELS outside a joint block", line_number)
            joints[stack[-1]]["channels"] = names
        elif tok == "}":
            if not stack:
                raise BvhParseError("unmatched '}'", line_number)
            stack.pop()
        else:
            raise BvhParseError(f"unexpected token '{tok}'", line_number)

    if not joints:
        raise BvhParseError("HIERARCHY declares no joints", line_number)
    skeleton = SkeletonHierarchy(tuple(Joint(**j) for j in joints))
    return skeleton, line_number


def parse_bvh(text: str) -> Tuple[SkeletonHierarchy, "MotionSequence"]:
    """Parses a BVH document into its skeleton and raw channel frames (degrees).

    Raises:
        BvhParseError: On missing sections, frame-count or channel-count mismatches,
            and non-numeric frame data; the message carries the line number.
    """
    from .motion import MotionSequence

    lines = text.splitlines()
    skeleton, motion_line = _parse_hierarchy(lines)

    rest = [(i, lines[i - 1].strip()) for i in range(motion_line + 1, len(lines) + 1)]
    rest = [(i, line) for i, line in rest if line]
    if len(rest) < 2 or not rest[0][1].startswith("Frames:") or not rest[1][1].startswith("Frame Time:"):
        raise BvhParseError("MOTION section needs 'Frames:' and 'Frame Time:' lines", motion_line)
    frames_line, frames_text = rest[0]
    time_line, time_text = rest[1]
    declared = frames_text.split(":", 1)[1].strip()
    if not declared.isdigit():
        raise BvhParseError(f"invalid frame count '{declared}'", frames_line)
    n_frames = int(declared)
    frame_time = _float(time_text.split(":", 1)[1].strip(), time_line, "Frame Time")
    if frame_time <= 0:
        raise BvhParseError(f"Frame Time must be positive, got {frame_time}", time_line)

    rows = rest[2:]
    if len(rows) != n_frames:
        raise BvhParseError(f"declared Frames: {n_frames} but found {len(rows)} data rows", frames_line)
    if n_frames < 1:
        raise BvhParseError("MOTION section contains no frames", frames_line)

    data = np.empty((n_frames, skeleton.total_channels), dtype=np.float64)
    for k, (line_number, line) in enumerate(rows):
        values = line.split()
        if len(values) != skeleton.total_channels:
            raise BvhParseError(
                f"frame row has {len(values)} values but the hierarchy declares {skeleton.total_channels} channels",
                line_number,
            )
        data[k] = [_float(v, line_number, "frame value") for v in values]

    logger.debug(f"Parsed BVH: {len(skeleton.joints)} joints, {skeleton.total_channels} channels, {n_frames} frames")
    return skeleton, MotionSequence(frames=data, frame_rate_hz=1.0 / frame_time, category_label="")


def serialize_bvh(skeleton: SkeletonHierarchy, seq: "MotionSequence") -> str:
    """Writes a skeleton and raw channel frames back to BVH text."""
    if seq.dim != skeleton.total_channels:
        raise ValueError(f"Sequence has {seq.dim} channels but skeleton declares {skeleton.total_channels}")
    out: List[str] = ["HIERARCHY"]

    def fmt(values: Sequence[float]) -> str:
        return " ".join(f"{v:.17g}" for v in values)

    def write_joint(index: int, depth: int) -> None:
        joint = skeleton.joints[index]
        pad = "  " * depth
        out.append(f"{pad}{'ROOT' if index == 0 else 'JOINT'} {joint.name}")
        out.append(f"{pad}{{")
        out.append(f"{pad}  OFFSET {fmt(joint.offset)}")
        if joint.channels:
            out.append(f"{pad}  CHANNELS {len(joint.channels)} {' '.join(joint.channels)}")
        for child in skeleton.children(index):
            write_joint(child, depth + 1)
        if joint.end_site is not None:
            out.append(f"{pad}  End Site")
            out.append(f"{pad}  {{")
            out.append(f"{pad}    OFFSET {fmt(joint.end_site)}")
            out.append(f"{pad}  }}")
        out.append(f"{pad}}}")

    write_joint(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {seq.n_frames}")
    out.append(f"Frame Time: {1.0 / seq.frame_rate_hz:.17g}")
    out.extend(fmt(row) for row in seq.frames)
    return "\n".join(out) + "\n"
