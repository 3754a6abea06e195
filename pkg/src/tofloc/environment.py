"""The known map: an axis-aligned cuboid with optional open faces.

The map frame has its origin at the bottom center of the cuboid, ``x`` and
``y`` horizontal and ``z`` up. Faces are named by the axis they are normal
to and the side they sit on: ``x-``, ``x+``, ``y-``, ``y+``, ``z-`` (floor)
and ``z+`` (ceiling).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tofloc.geometry import Frame, PointCloud
from tofloc.validation import check_count, check_points, check_unit_vector

FACE_NAMES = ("x-", "x+", "y-", "y+", "z-", "z+")
DEFAULT_DIMS = (0.7, 0.7, 0.6)
DEFAULT_OPEN_FACES = frozenset({"y-", "y+"})


@dataclass(frozen=True)
class Aabb:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid box {lo} -> {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def inflate(self, margin: float) -> Aabb:
        return Aabb(tuple(v - margin for v in self.lo), tuple(v + margin for v in self.hi))

    def contains(self, points) -> np.ndarray:
        p = check_points(points)
        return np.all((p >= np.array(self.lo)) & (p <= np.array(self.hi)), axis=1)


@dataclass(frozen=True)
class Face:
    """Axis-aligned rectangle ``{p : p[axis] == value, lo <= p[others] <= hi}``."""

    name: str
    axis: int
    value: float
    others: tuple
    lo: tuple
    hi: tuple

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])


def cuboid_faces(dims) -> list:
    dx, dy, dz = (float(d) for d in dims)
    lo = (-dx / 2, -dy / 2, 0.0)
    hi = (dx / 2, dy / 2, dz)
    faces = []
    for axis in range(3):
        others = tuple(a for a in range(3) if a != axis)
        for sign, value in (("-", lo[axis]), ("+", hi[axis])):
            faces.append(Face(
                name="xyz"[axis] + sign, axis=axis, value=value, others=others,
                lo=tuple(lo[a] for a in others), hi=tuple(hi[a] for a in others),
            ))
    return faces


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    dims: tuple
    open_faces: frozenset
    surfaces: tuple
    model_cloud: PointCloud = field(repr=False)

    @property
    def aabb(self) -> Aabb:
        dx, dy, dz = self.dims
        return Aabb((-dx / 2, -dy / 2, 0.0), (dx / 2, dy / 2, dz))


def build_cuboid_map(dims=DEFAULT_DIMS, open_faces=DEFAULT_OPEN_FACES,
                     n_points: int = 2000, seed: int = 0) -> EnvironmentMap:
    """Build the cuboid map and sample ``n_points`` uniformly by area on its closed faces."""
    n_points = check_count(n_points, "n_points")
    open_faces = frozenset(open_faces)
    unknown = open_faces - set(FACE_NAMES)
    if unknown:
        raise ValueError(f"unknown face names {sorted(unknown)}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    closed = tuple(f for f in cuboid_faces(dims) if f.name not in open_faces)
    if not closed:
        raise ValueError("every face is open; the map would be empty")

    rng = np.random.default_rng(seed)
    areas = np.array([f.area for f in closed])
    which = rng.choice(len(closed), size=n_points, p=areas / areas.sum())
    uv = rng.random((n_points, 2))
    pts = np.empty((n_points, 3))
    for i, f in enumerate(closed):
        sel = which == i
        pts[sel, f.axis] = f.value
        for j, a in enumerate(f.others):
            pts[sel, a] = f.lo[j] + uv[sel, j] * (f.hi[j] - f.lo[j])
    return EnvironmentMap(tuple(float(d) for d in dims), open_faces, closed,
                          PointCloud(pts, Frame.MAP))


def ray_cast_many(env: EnvironmentMap, origins, directions, max_range: float = np.inf) -> np.ndarray:
    """Vectorized :func:`ray_cast`; returns hit distances with NaN for misses."""
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(check_unit_vector(directions))
    o, d = np.broadcast_arrays(o, d)
    best = np.full(o.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for f in env.surfaces:
            da = d[:, f.axis]
            t = (f.value - o[:, f.axis]) / da
            ok = (da != 0) & (t > 0) & (t <= max_range)
            for j, a in enumerate(f.others):
                c = o[:, a] + t * d[:, a]
                ok &= (c >= f.lo[j]) & (c <= f.hi[j])
            best = np.where(ok & (t < best), t, best)
    best[np.isinf(best)] = np.nan
    return best


def ray_cast(env: EnvironmentMap, origin, direction, max_range: float = np.inf):
    """Distance to the first closed face hit along the ray, or ``None`` on a miss."""
    hit = ray_cast_many(env, np.reshape(origin, (1, 3)), np.reshape(direction, (1, 3)), max_range)[0]
    return None if np.isnan(hit) else float(hit)


def crop(c: PointCloud, box: Aabb) -> PointCloud:
    """Keep the points inside ``box`` (inclusive), in their original order."""
    return PointCloud(c.points[box.contains(c.points)], c.frame)


def on_closed_face(env: EnvironmentMap, points, tol: float = 1e-9) -> np.ndarray:
    """Per-point flag: lies on some closed face rectangle within ``tol``."""
    p = check_points(points)
    out = np.zeros(p.shape[0], dtype=bool)
    for f in env.surfaces:
        ok = np.abs(p[:, f.axis] - f.value) <= tol
        for j, a in enumerate(f.others):
            ok &= (p[:, a] >= f.lo[j] - tol) & (p[:, a] <= f.hi[j] + tol)
        out |= ok
    return out


def save_points(path, cloud: PointCloud) -> None:
    """Write one ``x y z`` triple per line."""
    with open(path, "w") as fh:
        for x, y, z in cloud.points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def load_points(path, frame: Frame = Frame.MAP) -> PointCloud:
    text = Path(path).read_text().split()
    return PointCloud(np.array(text, dtype=float).reshape(-1, 3), frame)
