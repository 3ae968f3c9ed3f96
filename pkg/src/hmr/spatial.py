"""Rigid-body helpers: rotations, SO(3) log, and the 6-DOF pose type."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

SO3_TOL = 1e-9


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R: np.ndarray, tol: float = SO3_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix."""
    return Rotation.from_matrix(R).as_rotvec()


def rotation_error(R_target: np.ndarray, R_current: np.ndarray) -> np.ndarray:
    """Rotation vector taking ``R_current`` to ``R_target``, in the base frame."""
    return so3_log(R_target @ R_current.T)


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> float:
    return float(np.linalg.norm(rotation_error(R1, R2)))


def euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X angles ``(theta_z, theta_y, theta_x)``."""
    # Closed form keeps the round trip at machine precision away from gimbal lock.
    R = np.asarray(R, dtype=float)
    theta_y = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    theta_z = float(np.arctan2(R[1, 0], R[0, 0]))
    theta_x = float(np.arctan2(R[2, 1], R[2, 2]))
    return theta_z, theta_y, theta_x


def from_euler_zyx(theta_z: float, theta_y: float, theta_x: float) -> np.ndarray:
    return rot_z(theta_z) @ rot_y(theta_y) @ rot_x(theta_x)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    M = u @ vt
    if np.linalg.det(M) < 0:
        u[:, -1] *= -1
        M = u @ vt
    return M


@dataclass(frozen=True, eq=False)
class Pose6:
    """End-effector pose: position in metres and an SO(3) rotation.

    The rotation is authoritative; ``euler`` is derived (intrinsic Z-Y-X).
    """

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not is_rotation(R):
            raise ValueError("rotation is not in SO(3)")
        p.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", R)

    @property
    def euler(self) -> tuple[float, float, float]:
        """``(theta_z, theta_y, theta_x)`` in radians."""
        return euler_zyx(self.rotation)

    @property
    def approach(self) -> np.ndarray:
        """Tool +z axis in the base frame."""
        return self.rotation[:, 2].copy()

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose6":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], T[:3, :3])

    @classmethod
    def from_euler(cls, position, theta_z: float, theta_y: float, theta_x: float) -> "Pose6":
        return cls(position, from_euler_zyx(theta_z, theta_y, theta_x))

    def to_dict(self) -> dict:
        return {
            "position_m": [float(v) for v in self.position],
            "euler_zyx_rad": list(self.euler),
            "rotation": [[float(v) for v in row] for row in self.rotation],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pose6":
        if "rotation" in data:
            return cls(data["position_m"], data["rotation"])
        return cls.from_euler(data["position_m"], *data["euler_zyx_rad"])

    def __repr__(self) -> str:
        p = np.array2string(self.position, precision=4)
        e = np.array2string(np.array(self.euler), precision=4)
        return f"Pose6(position={p}, euler_zyx={e})"


def interpolate_pose(a: Pose6, b: Pose6, s: float) -> Pose6:
    """Linear position / slerp rotation blend, ``s`` in [0, 1]."""
    p = (1.0 - s) * a.position + s * b.position
    rots = Rotation.from_matrix(np.stack([a.rotation, b.rotation]))
    R = Slerp([0.0, 1.0], rots)([s]).as_matrix()[0]
    return Pose6(p, orthonormalize(R))
