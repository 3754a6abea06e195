"""Rigid-body poses, frame transforms and the point-cloud container."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from tofloc.validation import check_points

TWO_PI = 2.0 * math.pi


class DegenerateWeightsError(ValueError):
    """Raised when a weighted reduction receives weights summing to zero."""


class FrameMismatchError(ValueError):
    """Raised when two clouds expressed in different frames are combined."""


class Frame(str, enum.Enum):
    SENSOR = "sensor"
    TIP = "tip"
    BASE = "base"
    MAP = "map"


def wrap_angle(theta):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    wrapped = -np.mod(-np.asarray(theta, dtype=float) + math.pi, TWO_PI) + math.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius norm) to ``m``."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Pose2:
    """Planar pose: position in meters, heading ``gamma`` in radians."""

    x: float
    y: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "gamma", wrap_angle(float(self.gamma)))
        if not all(math.isfinite(v) for v in (self.x, self.y, self.gamma)):
            raise ValueError(f"non-finite Pose2 {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.gamma])

    @classmethod
    def from_array(cls, a) -> Pose2:
        return cls(a[0], a[1], a[2])


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform ``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite Pose3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose3:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Pose3:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: Pose3) -> Pose3:
        return Pose3(self.rotation @ other.rotation,
                     self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose3:
        rt = self.rotation.T
        return Pose3(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def yaw(self) -> float:
        return wrap_angle(math.atan2(self.rotation[1, 0], self.rotation[0, 0]))

    def __eq__(self, other):
        if not isinstance(other, Pose3):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return f"Pose3(t={self.translation.tolist()}, yaw={self.yaw():.4f})"


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ``(n, 3)`` array of points in meters tagged with its frame."""

    points: np.ndarray
    frame: Frame

    def __post_init__(self):
        pts = check_points(self.points).copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame", Frame(self.frame))

    @classmethod
    def empty(cls, frame: Frame) -> PointCloud:
        return cls(np.empty((0, 3)), frame)

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.points, other.points)


def pose2_to_pose3(p: Pose2, z_offset: float = 0.0) -> Pose3:
    """Lift a planar pose to a 3-D transform at a fixed height."""
    return Pose3(rot_z(p.gamma), (p.x, p.y, z_offset))


def pose3_to_pose2(t: Pose3) -> Pose2:
    return Pose2(t.translation[0], t.translation[1], t.yaw())


def transform_cloud(c: PointCloud, t: Pose3, new_frame: Frame) -> PointCloud:
    return PointCloud(t.apply(c.points), new_frame)


def circular_mean(angles, weights=None) -> float:
    """Weighted mean direction of ``angles``, wrapped to (-pi, pi].

    Raises
    ------
    DegenerateWeightsError
        If the weights sum to zero.
    """
    a = np.asarray(angles, dtype=float)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != a.shape:
        raise ValueError("angles and weights must have the same shape")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not w.sum() > 0:
        raise DegenerateWeightsError("weights sum to zero")
    return wrap_angle(math.atan2(float(np.dot(w, np.sin(a))), float(np.dot(w, np.cos(a)))))


def angle_error(a: float, b: float) -> float:
    """Absolute wrapped difference, in [0, pi]."""
    return abs(wrap_angle(a - b))
