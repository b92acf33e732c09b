# tests/test_bvh.py

import numpy as np
import pytest

from motion_metric.bvh import Joint, SkeletonHierarchy, parse_bvh, serialize_bvh
from motion_metric.errors import BvhParseError
from motion_metric.motion import MotionSequence

SINGLE_JOINT = """HIERARCHY
ROOT Hips
{
  OFFSET 0.0 0.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0.0 1.0 0.0
  }
}
MOTION
Frames: 2
Frame Time: 0.008333
0.0 1.0 2.0 10.0 20.0 30.0
0.5 1.5 2.5 11.0 21.0 31.0
"""


def _with_motion(body: str) -> str:
    return SINGLE_JOINT.split("MOTION")[0] + "MOTION\n" + body


def test_single_joint_document():
    skeleton, seq = parse_bvh(SINGLE_JOINT)
    assert skeleton.total_channels == 6
    assert skeleton.joints[0].end_site == (0.0, 1.0, 0.0)
    assert (seq.n_frames, seq.dim) == (2, 6)
    np.testing.assert_array_equal(seq.frames[1], [0.5, 1.5, 2.5, 11.0, 21.0, 31.0])


def test_frame_time_gives_rate():
    _, seq = parse_bvh(SINGLE_JOINT)
    assert seq.frame_rate_hz == pytest.approx(120.0, abs=0.01)


def test_frame_count_mismatch_cites_count():
    text = SINGLE_JOINT.replace("Frames: 2", "Frames: 3")
    with pytest.raises(BvhParseError, match="Frames: 3") as excinfo:
        parse_bvh(text)
    assert excinfo.value.line_number == 12


def test_channel_count_mismatch():
    text = _with_motion("Frames: 1\nFrame Time: 0.01\n1 2 3 4 5\n")
    with pytest.raises(BvhParseError, match="6 channels") as excinfo:
        parse_bvh(text)
    assert excinfo.value.line_number == 14


def test_non_numeric_frame_value():
    text = _with_motion("Frames: 1\nFrame Time: 0.01\n1 2 3 4 five 6\n")
    with pytest.raises(BvhParseError, match="line 14"):
        parse_bvh(text)


def test_missing_motion_section():
    with pytest.raises(BvhParseError, match="MOTION"):
        parse_bvh(SINGLE_JOINT.split("MOTION")[0])


def test_missing_hierarchy_section():
    with pytest.raises(BvhParseError, match="HIERARCHY"):
        parse_bvh("MOTION\nFrames: 0\nFrame Time: 0.1\n")


def test_round_trip_on_generated_file():
    rng = np.random.default_rng(3)
    skeleton = SkeletonHierarchy((
        Joint("Hips", None, (0.0, 0.0, 0.0), ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")),
        Joint("Spine", 0, (0.0, 5.0, 0.0), ("Zrotation", "Xrotation", "Yrotation")),
        Joint("Head", 1, (0.0, 4.0, 0.0), ("Zrotation", "Xrotation", "Yrotation"), end_site=(0.0, 1.0, 0.0)),
        Joint("LeftLeg", 0, (1.0, -5.0, 0.0), ("Zrotation", "Yrotation", "Xrotation"), end_site=(0.0, -3.0, 0.0)),
    ))
    frames = rng.uniform(-180.0, 180.0, size=(7, skeleton.total_channels))
    seq = MotionSequence(frames=frames, frame_rate_hz=120.0, category_label="x")

    parsed_skeleton, parsed = parse_bvh(serialize_bvh(skeleton, seq))
    assert parsed_skeleton == skeleton
    np.testing.assert_allclose(parsed.frames, frames, rtol=0, atol=1e-9)
    assert parsed.frame_rate_hz == pytest.approx(120.0)


def test_parent_must_precede_child():
    with pytest.raises(ValueError):
        SkeletonHierarchy((
            Joint("Root", None, (0.0, 0.0, 0.0), ()),
            Joint("Child", 2, (0.0, 0.0, 0.0), ()),
        ))
