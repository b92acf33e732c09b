# src/motion_metric/rotations.py

"""Euler-angle to exponential-map conversion for BVH joint rotations."""

from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError

SUPPORTED_ORDERS = ("ZXY", "ZYX", "XYZ", "XZY", "YXZ", "YZX")


def normalize_rotation_order(rotation_order: str | Sequence[str]) -> str:
    """Turns 'ZXY' or ['Zrotation', 'Xrotation', 'Yrotation'] into 'ZXY'."""
    if isinstance(rotation_order, str):
        order = rotation_order.upper()
    else:
        order = "".join(channel.strip()[0].upper() for channel in rotation_order)
    if order not in SUPPORTED_ORDERS:
        raise ConfigError("rotation_order", f"unsupported rotation order '{order}'")
    return order


def euler_matrix(angles_deg: np.ndarray, rotation_order: str | Sequence[str]) -> np.ndarray:
    """Rotation matrices for Euler angles applied in channel order.

    Channels are composed in file order and right-multiplied
    (R = R_first @ R_second @ R_third), which is scipy's intrinsic convention.
    """
    order = normalize_rotation_order(rotation_order)
    return Rotation.from_euler(order, np.asarray(angles_deg, dtype=np.float64), degrees=True).as_matrix()


def euler_to_expmap(angles_deg: np.ndarray, rotation_order: str | Sequence[str]) -> np.ndarray:
    """Converts Euler angles in degrees to axis-angle vectors theta * u.

    Accepts a single 3-vector or an (n, 3) array; theta is always in [0, pi].
    """
    order = normalize_rotation_order(rotation_order)
    rotation = Rotation.from_euler(order, np.asarray(angles_deg, dtype=np.float64), degrees=True)
    return rotation.as_rotvec()


def expmap_to_matrix(expmap: np.ndarray) -> np.ndarray:
    """Rotation matrix (or stack of matrices) for axis-angle vectors."""
    return Rotation.from_rotvec(np.asarray(expmap, dtype=np.float64)).as_matrix()


def remove_yaw(expmap: np.ndarray) -> np.ndarray:
    """Removes the heading (rotation about the vertical Y axis) from root rotations.

    Args:
        expmap (np.ndarray): (n, 3) root axis-angle vectors.

    Returns:
        np.ndarray: (n, 3) axis-angle vectors with zero heading.
    """
    matrices = expmap_to_matrix(expmap)
    heading = np.arctan2(matrices[..., 0, 2], matrices[..., 2, 2])
    unyaw = Rotation.from_euler("Y", -heading).as_matrix()
    return Rotation.from_matrix(unyaw @ matrices).as_rotvec()
