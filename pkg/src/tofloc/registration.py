"""Nearest-neighbor index over the map cloud and the ICP fitness score.

The fitness is the correspondence step of point-to-point ICP evaluated once
at a given transform: the fraction of source points that have a map point
within ``max_correspondence_distance``. Points farther away are outliers
and contribute nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from tofloc.geometry import PointCloud, Pose3
from tofloc.validation import check_points, check_positive


@dataclass(frozen=True)
class ScoreParams:
    max_correspondence_distance: float = 0.05

    def __post_init__(self):
        check_positive(self.max_correspondence_distance, "max_correspondence_distance")


def _exact_within(tree: cKDTree, q: np.ndarray, radius: float) -> np.ndarray:
    """``distance <= radius`` with the distance recomputed in plain numpy arithmetic."""
    out = np.zeros(q.shape[0], dtype=bool)
    if q.shape[0] == 0:
        return out
    d, i = tree.query(q, distance_upper_bound=radius * (1 + 1e-9))
    near = np.isfinite(d)
    diff = tree.data[i[near]] - q[near]
    out[near] = np.sqrt((diff ** 2).sum(axis=1)) <= radius
    return out


class _InlierGrid:
    """Exact ``distance <= radius`` test with a distance-bound lookup in front of the tree.

    Each cell stores the distance from its center to the nearest map point.
    Any point in the cell is within half a cell diagonal of that value, which
    settles most queries; the rest fall through to the tree.
    """

    def __init__(self, tree: cKDTree, points: np.ndarray, radius: float, cells_per_radius: int = 8):
        self.tree = tree
        self.radius = radius
        self.h = radius / cells_per_radius
        margin = radius + 2 * self.h
        self.lo = points.min(axis=0) - margin
        self.shape = np.ceil((points.max(axis=0) + margin - self.lo) / self.h).astype(int) + 1
        axes = [self.lo[a] + (np.arange(self.shape[a]) + 0.5) * self.h for a in range(3)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        dc, _ = tree.query(centers)
        # margin covers floating-point misassignment of points near cell borders
        half_diag = self.h * math.sqrt(3) / 2 * (1 + 1e-6) + 1e-12
        # 1 = inlier, 0 = outlier, 2 = undecided
        state = np.full(dc.shape, 2, dtype=np.uint8)
        state[dc + half_diag < radius] = 1
        state[dc - half_diag > radius] = 0
        self.state = state

    def within(self, q: np.ndarray) -> np.ndarray:
        n = q.shape[0]
        flat = np.zeros(n, dtype=np.int64)
        inside = np.ones(n, dtype=bool)
        for a in range(3):
            c = np.floor((q[:, a] - self.lo[a]) * (1.0 / self.h)).astype(np.int64)
            inside &= (c >= 0) & (c < self.shape[a])
            flat = flat * self.shape[a] + c
        st = np.where(inside, self.state[np.where(inside, flat, 0)], 0)
        out = st == 1
        todo = np.flatnonzero(st == 2)
        if todo.size:
            out[todo] = _exact_within(self.tree, q[todo], self.radius)
        return out


# above this many cells the lookup table costs more than it saves
_MAX_GRID_CELLS = 4_000_000


def _grid_cells(points: np.ndarray, radius: float, cells_per_radius: int = 8) -> float:
    h = radius / cells_per_radius
    span = points.max(axis=0) - points.min(axis=0) + 2 * (radius + 2 * h)
    return float(np.prod(np.ceil(span / h) + 1))


class NnIndex:
    """Static nearest-neighbor index; ties go to the smallest point index."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("cannot index an empty cloud")
        self.cloud = cloud
        uniq, first = np.unique(cloud.points, axis=0, return_index=True)
        self._points = uniq
        self._orig = first
        self._tree = cKDTree(uniq)
        self._grids = {}

    @property
    def frame(self):
        return self.cloud.frame

    def __len__(self):
        return len(self.cloud)

    def query(self, points) -> tuple:
        """Nearest map point for each query: ``(distances, indices)``."""
        q = check_points(points)
        if q.shape[0] == 0:
            return np.empty(0), np.empty(0, dtype=int)
        k = min(2, self._points.shape[0])
        _, cand = self._tree.query(q, k=k)
        cand = cand.reshape(q.shape[0], k)
        d2 = ((self._points[cand] - q[:, None, :]) ** 2).sum(axis=2)
        best = d2.min(axis=1)
        idx = np.where(d2 == best[:, None], self._orig[cand], np.iinfo(np.int64).max).min(axis=1)
        # a tie with the k-th candidate may hide further equidistant points
        if k > 1:
            for i in np.flatnonzero(d2[:, -1] == best):
                ball = self._tree.query_ball_point(q[i], math.sqrt(best[i]) * (1 + 1e-9) + 1e-300)
                ball = np.asarray(ball, dtype=int)
                bd2 = ((self._points[ball] - q[i]) ** 2).sum(axis=1)
                idx[i] = self._orig[ball[bd2 == bd2.min()]].min()
        return np.sqrt(best), idx

    def within(self, points, radius: float) -> np.ndarray:
        """Flag the query points that have an indexed point within ``radius``."""
        q = check_points(points)
        check_positive(radius, "radius")
        if radius not in self._grids:
            small = _grid_cells(self._points, radius) <= _MAX_GRID_CELLS
            self._grids[radius] = _InlierGrid(self._tree, self._points, radius) if small else None
        grid = self._grids[radius]
        if grid is not None:
            return grid.within(q)
        return _exact_within(self._tree, q, radius)


def build_index(cloud: PointCloud) -> NnIndex:
    return NnIndex(cloud)


def registration_score(source: PointCloud, index: NnIndex, t: Pose3,
                       params: ScoreParams = ScoreParams()) -> float:
    """Inlier fraction of ``source`` mapped by ``t`` against the indexed cloud, in [0, 1]."""
    if len(source) == 0:
        return 0.0
    hits = index.within(t.apply(source.points), params.max_correspondence_distance)
    return float(hits.mean())


def registration_scores(points, index: NnIndex, poses, z_offset: float,
                        params: ScoreParams = ScoreParams()) -> np.ndarray:
    """Score one source cloud under many planar poses ``(M, 3)`` lifted to height ``z_offset``."""
    p = check_points(points)
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    if p.shape[0] == 0:
        return np.zeros(poses.shape[0])
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    q = np.empty((poses.shape[0], p.shape[0], 3))
    q[..., 0] = c * p[:, 0] - s * p[:, 1] + poses[:, 0:1]
    q[..., 1] = s * p[:, 0] + c * p[:, 1] + poses[:, 1:2]
    q[..., 2] = p[:, 2] + z_offset
    hits = index.within(q.reshape(-1, 3), params.max_correspondence_distance)
    return hits.reshape(poses.shape[0], p.shape[0]).mean(axis=1)
