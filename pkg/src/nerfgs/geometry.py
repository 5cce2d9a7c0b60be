"""Directions, quaternions, pinhole cameras and pixel rays.

Camera frame: +x right, +y up, looking down -z. ``pose`` maps camera
coordinates to world coordinates. Pixel ``(i, j)`` (row, column) has its
center at continuous coordinates ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRay, InvalidCamera, NonUnitQuaternion, OutOfImage, ShapeMismatch
from .sh import N_COEFFS


@dataclass(frozen=True)
class Direction:
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = np.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("direction must be a finite nonzero vector")
        object.__setattr__(self, "x", float(self.x / n))
        object.__setattr__(self, "y", float(self.y / n))
        object.__setattr__(self, "z", float(self.z / n))

    @classmethod
    def of(cls, v) -> "Direction":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[0], v[1], v[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def check_sh(coeffs) -> np.ndarray:
    """Validate an SH coefficient vector and return it as a float64 (48,) array."""
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if c.shape != (N_COEFFS,):
        raise ShapeMismatch(f"expected {N_COEFFS} SH coefficients, got {c.size}")
    if not np.all(np.isfinite(c)):
        raise ValueError("SH coefficients must be finite")
    return c


@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    q = q.as_array() if isinstance(q, Quaternion) else np.asarray(q, dtype=np.float64)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise NonUnitQuaternion(f"|q| = {np.linalg.norm(q):.9g}")
    return quat_to_matrix_batch(q[None])[0]


def quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    """``(N, 4)`` unit quaternions -> ``(N, 3, 3)``; no norm check."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_matrix_vjp(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull ``dL/dR`` (N, 3, 3) back to ``dL/dq`` for unit quaternions (N, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0]
              - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([dw, dx, dy, dz], axis=-1)


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        pose = np.array(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise InvalidCamera("pose must be 4x4")
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise InvalidCamera("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCamera("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidCamera("principal point outside the image")
        R = pose[:3, :3]
        if (np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1) > 1e-6
                or not np.all(np.isfinite(pose))):
            raise InvalidCamera("pose rotation is not a proper rotation")

    @property
    def rotation(self) -> np.ndarray:
        """World-from-camera rotation."""
        return self.pose[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]

    def with_pose(self, pose) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def pixel_dirs(self) -> np.ndarray:
        """Unit world directions through every pixel center, ``(H, W, 3)``."""
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack([(j - self.cx) / self.fx, -(i - self.cy) / self.fy,
                      -np.ones_like(j)], axis=-1)
        d = d @ self.rotation.T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height) == (
            other.fx, other.fy, other.cx, other.cy, other.width, other.height
        ) and np.array_equal(self.pose, other.pose)


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera pose placing the camera at ``position`` gazing at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, (0.0, 0.0, 1.0))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -forward
    pose[:3, 3] = position
    return pose


def intrinsics_from_fov(width: int, height: int, fov_x_deg: float) -> tuple[float, float, float, float]:
    f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
    return f, f, width / 2.0, height / 2.0


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    dir: Direction
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        if not (np.isfinite(self.t_near) and np.isfinite(self.t_far)):
            raise DegenerateRay("ray bounds must be finite")
        if not (0 <= self.t_near < self.t_far):
            raise DegenerateRay(f"need 0 <= t_near < t_far, got {self.t_near}, {self.t_far}")


def pixel_ray(cam: Camera, px: float, py: float, t_near: float = 0.0, t_far: float = 100.0) -> Ray:
    """Ray through continuous pixel coordinate ``(px, py)``."""
    if not (0 <= px <= cam.width and 0 <= py <= cam.height):
        raise OutOfImage(f"({px}, {py}) outside {cam.width}x{cam.height}")
    d = np.array([(px - cam.cx) / cam.fx, -(py - cam.cy) / cam.fy, -1.0])
    return Ray(cam.center.copy(), Direction.of(cam.rotation @ d), t_near, t_far)


def ray_box_intersect(origins, dirs, bbox_min, bbox_max, t_min: float = 0.0):
    """Slab test. Returns ``(t_near, t_far, hit)`` per ray."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (np.asarray(bbox_min) - origins) * inv
        t1 = (np.asarray(bbox_max) - origins) * inv
    lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    tn = np.maximum(lo.max(axis=-1), t_min)
    tf = hi.min(axis=-1)
    return tn, tf, tf > tn
