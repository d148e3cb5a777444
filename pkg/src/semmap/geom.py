"""Rigid-body transforms, pinhole camera model, and frame calibration.

Conventions used throughout the package:

* A :class:`Pose` maps points from its source frame into its target frame,
  ``p_out = R @ p_in + t``.  Composition ``compose(a, b)`` applies ``b``
  first, then ``a`` (homogeneous matrix product ``a @ b``).
* Camera frame is the usual optical frame: x right, y down, z forward.
  Pixel coordinates are (u, v) with u along image columns.
* Depth images store raw integer units; metric depth is
  ``raw / depth_scale``.
* Euler angles are Z-Y-X intrinsic (yaw, pitch, roll).
* Quaternions appear only at the trajectory-file boundary, ordered
  (qx, qy, qz, qw) as in TUM trajectory files.

All values are immutable after construction; every function here is pure
and safe to call from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_ROTATION_TOL = 1e-6


class NonPositiveDepth(ValueError):
    """Point has z <= 0 in the camera frame and cannot be projected."""


class ZeroDepth(ValueError):
    """Raw depth of 0 marks an invalid sensor reading (skip, do not map)."""


def _as_readonly(a, shape) -> np.ndarray:
    out = np.array(a, dtype=np.float64).reshape(shape)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid SE(3) transform: ``p_out = rotation @ p_in + translation``.

    ``rotation`` is a 3x3 orthonormal matrix with det +1, ``translation``
    a 3-vector in meters.  Both are stored read-only.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_readonly(self.rotation, (3, 3))
        t = _as_readonly(self.translation, (3,))
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ROTATION_TOL or abs(np.linalg.det(r) - 1.0) > _ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal with det +1 (error {err:.3g})")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return Pose(m[:3, :3], m[:3, 3])

    @staticmethod
    def from_quaternion(tx, ty, tz, qx, qy, qz, qw) -> "Pose":
        return Pose(rotation_from_quaternion(qx, qy, qz, qw), np.array([tx, ty, tz]))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a 3-point or an (N, 3) batch of points."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def quaternion(self) -> tuple[float, float, float, float]:
        """Rotation as (qx, qy, qz, qw), qw >= 0."""
        return quaternion_from_rotation(self.rotation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)


def compose(a: Pose, b: Pose) -> Pose:
    """Transform applying ``b`` first, then ``a`` (matrix product a @ b)."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    """Inverse transform: rotation R^T, translation -R^T t."""
    rt = p.rotation.T
    return Pose(rt, -(rt @ p.translation))


@dataclass(frozen=True)
class EulerAngles:
    """Z-Y-X intrinsic Euler angles in radians (applied yaw, pitch, roll)."""

    roll: float
    pitch: float
    yaw: float


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(e: EulerAngles) -> np.ndarray:
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rot_z(e.yaw) @ rot_y(e.pitch) @ rot_x(e.roll)


def euler_from_rotation(r: np.ndarray) -> EulerAngles:
    """Inverse of :func:`rotation_from_euler`; valid away from |pitch| = pi/2."""
    r = np.asarray(r, dtype=np.float64)
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return EulerAngles(roll=roll, pitch=pitch, yaw=yaw)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula; ``v`` is axis * angle (radians)."""
    v = np.asarray(v, dtype=np.float64)
    angle = float(np.linalg.norm(v))
    k = skew(v)
    if angle < 1e-10:
        # second-order series, exact enough below the cutoff
        return np.eye(3) + k + 0.5 * (k @ k)
    k = k / angle
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def axis_angle_from_rotation(r: np.ndarray) -> np.ndarray:
    """Logarithm of a rotation matrix as axis * angle; angle in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    angle = rotation_angle(r)
    if angle < 1e-10:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if math.pi - angle < 1e-6:
        # near pi the antisymmetric part vanishes; (R + I)/2 ~= axis axis^T,
        # so the row with the largest diagonal entry recovers the axis
        m = 0.5 * (r + np.eye(3))
        i = int(np.argmax(np.diag(m)))
        axis = m[i] / math.sqrt(max(m[i, i], 1e-300))
        axis = axis / np.linalg.norm(axis)
        # the residual antisymmetric part still carries the axis sign
        w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if float(np.dot(w, axis)) < 0.0:
            axis = -axis
        return axis * angle
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic rotation angle arccos((trace(R) - 1) / 2) in [0, pi].

    Evaluated as atan2 of the antisymmetric part's magnitude against the
    same cosine, which is exact for true rotations and does not amplify
    round-off near 0 or pi the way a bare arccos does.
    """
    c = (float(np.trace(r)) - 1.0) / 2.0
    s = 0.5 * math.sqrt(
        (r[2, 1] - r[1, 2]) ** 2 + (r[0, 2] - r[2, 0]) ** 2 + (r[1, 0] - r[0, 1]) ** 2
    )
    return math.atan2(s, max(-1.0, min(1.0, c)))


def rotation_from_quaternion(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if n == 0.0:
        raise ValueError("zero quaternion")
    x, y, z, w = qx / n, qy / n, qz / n, qw / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_from_rotation(r: np.ndarray) -> tuple[float, float, float, float]:
    """Rotation matrix to unit quaternion (qx, qy, qz, qw) with qw >= 0."""
    r = np.asarray(r, dtype=np.float64)
    t = np.trace(r)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(r)))
        if i == 0:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
            w = (r[2, 1] - r[1, 2]) / s
        elif i == 1:
            s = math.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
            w = (r[0, 2] - r[2, 0]) / s
        else:
            s = math.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
            w = (r[1, 0] - r[0, 1]) / s
    n = math.sqrt(x * x + y * y + z * z + w * w)
    x, y, z, w = x / n, y / n, z / n, w / n
    if w < 0.0 or (w == 0.0 and (x < 0.0 or (x == 0.0 and (y < 0.0 or (y == 0.0 and z < 0.0))))):
        x, y, z, w = -x, -y, -z, -w
    return (x, y, z, w)


def slerp_rotation(r0: np.ndarray, r1: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation between two rotations, u in [0, 1]."""
    q0 = np.array(quaternion_from_rotation(r0))
    q1 = np.array(quaternion_from_rotation(r1))
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    if dot > 1.0 - 1e-12:
        q = q0 + u * (q1 - q0)
    else:
        theta = math.acos(min(1.0, dot))
        q = (math.sin((1.0 - u) * theta) * q0 + math.sin(u * theta) * q1) / math.sin(theta)
    q = q / np.linalg.norm(q)
    return rotation_from_quaternion(*q)


def interpolate_pose(a: Pose, b: Pose, u: float) -> Pose:
    """Linear in translation, spherical in rotation; u in [0, 1]."""
    return Pose(
        slerp_rotation(a.rotation, b.rotation, u),
        (1.0 - u) * a.translation + u * b.translation,
    )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: u = fx * x/z + cx, v = fy * y/z + cy.

    ``depth_scale`` converts raw integer depth to meters (raw / depth_scale).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


def project(k: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Camera-frame point to pixel (u, v); raises NonPositiveDepth if z <= 0."""
    p = np.asarray(p_cam, dtype=np.float64)
    if p[2] <= 0.0:
        raise NonPositiveDepth(f"point behind camera (z = {p[2]:.6g})")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])


def back_project(k: CameraIntrinsics, pixel, raw_depth: int) -> np.ndarray:
    """Pixel plus raw depth to a camera-frame point in meters.

    ``d = raw_depth / depth_scale`` and the result is
    ``((u - cx) d / fx, (v - cy) d / fy, d)``, the exact inverse of
    :func:`project` at that pixel.
    """
    if raw_depth == 0:
        raise ZeroDepth("raw depth is 0 (invalid pixel)")
    u, v = float(pixel[0]), float(pixel[1])
    d = float(raw_depth) / k.depth_scale
    return np.array([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d])


_REMAP_PRESETS = {
    # optical (x right, y down, z forward) -> body (x forward, y left, z up)
    "ros-optical": ((2, 0, 1), (1, -1, -1)),
    # unsigned reordering x<-z, y<-x, z<-y
    "paper": ((2, 0, 1), (1, 1, 1)),
    "identity": ((0, 1, 2), (1, 1, 1)),
}
_REMAP_PRESETS["none"] = _REMAP_PRESETS["identity"]


@dataclass(frozen=True)
class AxisRemap:
    """Signed axis permutation: output axis i = signs[i] * input axis source[i]."""

    source: tuple[int, int, int]
    signs: tuple[int, int, int]

    def __post_init__(self):
        if sorted(self.source) != [0, 1, 2]:
            raise ValueError("source must be a permutation of (0, 1, 2)")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +1 or -1")

    @staticmethod
    def from_preset(name: str = "ros-optical") -> "AxisRemap":
        try:
            source, signs = _REMAP_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown axis remap preset {name!r}") from None
        return AxisRemap(source, signs)

    def matrix(self) -> np.ndarray:
        m = np.zeros((3, 3))
        for i in range(3):
            m[i, self.source[i]] = float(self.signs[i])
        return m


def remap_camera_to_world(pose: Pose, remap: AxisRemap) -> Pose:
    """Re-express a pose under a signed axis permutation of the world frame.

    Rotation is conjugated (A R A^T) and translation rotated (A t), so rigid
    distances are preserved exactly.
    """
    a = remap.matrix()
    return Pose(a @ pose.rotation @ a.T, a @ pose.translation)


def robot_pose(world_from_camera: Pose, camera_from_robot: Pose) -> Pose:
    """Vehicle body pose from the camera pose and the mount extrinsic."""
    return compose(world_from_camera, camera_from_robot)
