"""Multizone time-of-flight sensor model.

Zones form an ``rows x cols`` grid over a pyramidal field of view whose
full diagonal opening is ``diagonal_fov``. The optical axis is the sensor
``+z``; zone columns run along ``+x`` and rows along ``+y``. A range is the
Euclidean distance along the zone-center ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tofloc.environment import EnvironmentMap, ray_cast_many
from tofloc.geometry import Frame, PointCloud, Pose3
from tofloc.validation import check_positive, check_probability

MIN_RANGE = 1e-6


@dataclass(frozen=True)
class SensorIntrinsics:
    rows: int = 8
    cols: int = 8
    diagonal_fov: float = math.radians(65.0)
    max_range: float = 4.0
    frame_rate: float = 15.0

    def __post_init__(self):
        if self.rows != 8 or self.cols != 8:
            raise ValueError("only the 8x8 zone layout is supported")
        if not 0.0 < self.diagonal_fov < math.pi:
            raise ValueError(f"diagonal_fov must lie in (0, pi), got {self.diagonal_fov}")
        check_positive(self.max_range, "max_range")


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian range noise with standard deviation ``sigma_fraction * d``.

    ``outlier_fraction`` replaces that share of hits with a uniform range in
    ``(0, max_range]``; it is a crude stand-in for multipath returns.
    """

    sigma_fraction: float = 0.11
    dropout_prob: float = 0.0
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        check_positive(self.sigma_fraction, "sigma_fraction", strict=False)
        check_probability(self.dropout_prob, "dropout_prob")
        check_probability(self.outlier_fraction, "outlier_fraction")


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """One frame of zone ranges in meters; NaN marks an invalid zone."""

    ranges: np.ndarray
    sensor_id: str = "tof0"
    max_range: float = field(default=SensorIntrinsics.max_range, repr=False)

    def __post_init__(self):
        r = np.array(self.ranges, dtype=float).reshape(8, 8)
        valid = r[~np.isnan(r)]
        if np.any(valid <= 0) or np.any(valid > self.max_range):
            raise ValueError("valid ranges must lie in (0, max_range]")
        r.flags.writeable = False
        object.__setattr__(self, "ranges", r)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.ranges)

    def __eq__(self, other):
        if not isinstance(other, DepthFrame):
            return NotImplemented
        return self.sensor_id == other.sensor_id and np.array_equal(
            self.ranges, other.ranges, equal_nan=True)


def zone_directions(intr: SensorIntrinsics = SensorIntrinsics()) -> np.ndarray:
    """Unit ray for every zone, shape ``(rows, cols, 3)`` in the sensor frame."""
    tan_a = math.tan(intr.diagonal_fov / 2) / math.sqrt(2)
    u = (np.arange(intr.cols) + 0.5) / intr.cols * 2 - 1
    v = (np.arange(intr.rows) + 0.5) / intr.rows * 2 - 1
    vv, uu = np.meshgrid(v, u, indexing="ij")
    d = np.stack([uu * tan_a, vv * tan_a, np.ones_like(uu)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def simulate_frame(env: EnvironmentMap, sensor_pose: Pose3,
                   intr: SensorIntrinsics = SensorIntrinsics(),
                   noise: NoiseModel = NoiseModel(), rng=None,
                   sensor_id: str = "tof0") -> DepthFrame:
    """Cast every zone ray from ``sensor_pose`` (sensor-to-map) and perturb the hits.

    The same number of random draws is consumed whatever the scene, so a
    stream position maps to a fixed noise realization.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    dirs = zone_directions(intr).reshape(-1, 3) @ sensor_pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    d = ray_cast_many(env, sensor_pose.translation, dirs, intr.max_range)

    n = d.shape[0]
    eps = rng.normal(0.0, 1.0, n) * noise.sigma_fraction
    drop = rng.random(n) < noise.dropout_prob
    outlier = rng.random(n) < noise.outlier_fraction
    junk = intr.max_range * (1.0 - rng.random(n))

    r = np.clip(d * (1.0 + eps), MIN_RANGE, intr.max_range)
    r = np.where(outlier & ~np.isnan(d), junk, r)
    r[drop] = np.nan
    return DepthFrame(r.reshape(intr.rows, intr.cols), sensor_id, intr.max_range)


def depth_to_points(frame: DepthFrame, intr: SensorIntrinsics = SensorIntrinsics()) -> PointCloud:
    """One sensor-frame point per valid zone, in row-major zone order."""
    valid = frame.valid
    pts = frame.ranges[valid][:, None] * zone_directions(intr)[valid]
    return PointCloud(pts, Frame.SENSOR)


def format_frame(frame: DepthFrame) -> str:
    """Eight lines of eight values; invalid zones are written as ``nan``."""
    lines = [" ".join("nan" if np.isnan(v) else repr(v) for v in row.tolist())
             for row in frame.ranges]
    return "\n".join(lines) + "\n"


def parse_frame(text: str, sensor_id: str = "tof0",
                max_range: float = SensorIntrinsics.max_range) -> DepthFrame:
    rows = [line.split() for line in text.strip().splitlines()]
    if len(rows) != 8 or any(len(r) != 8 for r in rows):
        raise ValueError("a depth frame needs 8 lines of 8 values")
    return DepthFrame(np.array(rows, dtype=float), sensor_id, max_range)
