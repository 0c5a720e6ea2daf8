"""Pinhole camera model, rigid poses and camera-induced optical flow.

Pixels are ``(u, v)`` with pixel centres on integer coordinates. Camera
frames are right-handed with z pointing along the optical axis, so the
third coordinate of a camera-frame point is its depth.

All point-wise functions accept a single point or a stacked ``(N, k)``
array and return the matching shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateProjection, InvalidDepth


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (
            np.isfinite(p).all(axis=-1)
            & (p[..., 0] >= 0)
            & (p[..., 0] < self.width)
            & (p[..., 1] >= 0)
            & (p[..., 1] < self.height)
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }


class Pose:
    """Rigid transform stored body-to-world: ``x_world = R @ x_body + t``."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        self.rotation = np.eye(3) if rotation is None else np.array(rotation, dtype=float).reshape(3, 3)
        self.translation = np.zeros(3) if translation is None else np.array(translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=None) -> "Pose":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), translation)

    @classmethod
    def from_quaternion(cls, quat_xyzw, translation) -> "Pose":
        """Build from a TUM-ordered ``(qx, qy, qz, qw)`` quaternion."""
        return cls(Rotation.from_quat(np.asarray(quat_xyzw, dtype=float)).as_matrix(), translation)

    def quaternion(self) -> np.ndarray:
        """``(qx, qy, qz, qw)`` with ``qw >= 0``."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        """Map body-frame points to the world frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def is_valid(self, tol=1e-9) -> bool:
        R = self.rotation
        return bool(
            np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol
            and np.isfinite(self.translation).all()
        )

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians, in ``[0, pi]``.

        Equal to ``arccos((tr(R) - 1) / 2)`` with the argument clamped, but
        evaluated through atan2 so small angles keep full precision.
        """
        R = self.rotation
        c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
        s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return float(np.arctan2(s, c))

    def __repr__(self):
        return f"Pose(rotvec={np.round(self.rotvec(), 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def relative_motion(prev_pose: Pose, cur_pose: Pose) -> Pose:
    """Motion ``(R, t)`` taking current-camera points into the previous camera.

    For a static point, ``m_prev = R @ m_cur + t``.
    """
    return prev_pose.inverse() @ cur_pose


def project(m, K: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points to pixels."""
    m = np.asarray(m, dtype=float)
    z = m[..., 2]
    if np.any(~(z > 0)):
        raise DegenerateProjection("cannot project a point with non-positive depth")
    u = K.fx * m[..., 0] / z + K.cx
    v = K.fy * m[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def backproject(p, d, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixels with known depth to camera-frame points."""
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise InvalidDepth("depth must be positive")
    x = (p[..., 0] - K.cx) / K.fx * d
    y = (p[..., 1] - K.cy) / K.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def transform_static(m_cur, R, t) -> np.ndarray:
    """Position of a static landmark in the previous camera frame."""
    m_cur = np.asarray(m_cur, dtype=float)
    return m_cur @ np.asarray(R, dtype=float).T + np.asarray(t, dtype=float)


def camera_flow(p_cur, d_prev, R, t, K: CameraIntrinsics, d_cur=None) -> np.ndarray:
    """Optical flow ``p_k - p_{k-1}`` induced purely by camera motion.

    By default the depth change between frames is neglected
    (``d_cur == d_prev``), giving ``K (I - R) K^-1 [p;1] - K t / d_prev``.
    Passing ``d_cur`` keeps the exact ratio and reproduces the two-frame
    projection difference exactly.
    """
    p_cur = np.asarray(p_cur, dtype=float)
    d_prev = np.asarray(d_prev, dtype=float)
    if np.any(~(d_prev > 0)):
        raise InvalidDepth("previous depth must be positive")
    ratio = 1.0 if d_cur is None else np.asarray(d_cur, dtype=float) / d_prev
    Km = K.matrix
    ph = np.concatenate([p_cur, np.ones(p_cur.shape[:-1] + (1,))], axis=-1)
    rotated = ph @ (Km @ np.asarray(R, dtype=float) @ K.inverse_matrix).T
    Kt = Km @ np.asarray(t, dtype=float)
    flow = ph - np.expand_dims(ratio, -1) * rotated - np.expand_dims(1.0 / d_prev, -1) * Kt
    return flow[..., :2]


def predicted_flow_difference(p_i, p_j, d_i, d_j, obj_flow_j, t, K: CameraIntrinsics) -> np.ndarray:
    """Flow difference between adjacent pixels ``j`` (moving) and ``i`` (static).

    The rotational camera term cancels for neighbours, leaving the object
    flow of ``j`` minus the translational parallax between the two depths.
    """
    if np.linalg.norm(np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)) > 2.0:
        raise ValueError("pixels must be within 2 px of each other")
    if not (d_i > 0 and d_j > 0):
        raise InvalidDepth("depths must be positive")
    Kt = (K.matrix @ np.asarray(t, dtype=float))[:2]
    return np.asarray(obj_flow_j, dtype=float) - (1.0 / d_j - 1.0 / d_i) * Kt


def pixel_grid(K: CameraIntrinsics) -> np.ndarray:
    """``(H, W, 2)`` array of pixel-centre coordinates."""
    v, u = np.mgrid[0:K.height, 0:K.width]
    return np.stack([u, v], axis=-1).astype(float)
