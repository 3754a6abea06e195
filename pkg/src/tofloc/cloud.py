"""Incremental reconstruction: merging samples and voxel-grid downsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from tofloc.geometry import FrameMismatchError, PointCloud
from tofloc.validation import check_points, check_positive

MERGE_THEN_DOWNSAMPLE = "merge_then_downsample"
DOWNSAMPLE_THEN_MERGE = "downsample_then_merge"


@dataclass(frozen=True)
class VoxelGrid:
    voxel_size: float = 0.05
    origin: tuple = (0.0, 0.0, 0.0)
    order: str = MERGE_THEN_DOWNSAMPLE

    def __post_init__(self):
        check_positive(self.voxel_size, "voxel_size")
        if self.order not in (MERGE_THEN_DOWNSAMPLE, DOWNSAMPLE_THEN_MERGE):
            raise ValueError(f"unknown order {self.order!r}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))


def merge(accumulated: PointCloud, sample: PointCloud) -> PointCloud:
    """Concatenate, accumulated points first."""
    if accumulated.frame != sample.frame:
        raise FrameMismatchError(f"cannot merge {sample.frame.value} into {accumulated.frame.value}")
    return PointCloud(np.concatenate([accumulated.points, sample.points]), accumulated.frame)


def voxel_keys(points, voxel_size: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    return np.floor((check_points(points) - np.asarray(origin)) / voxel_size).astype(np.int64)


def voxel_centroids(points, voxel_size: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """One centroid per occupied voxel, in order of each voxel's first occurrence."""
    p = check_points(points)
    if p.shape[0] == 0:
        return p.copy()
    keys = voxel_keys(p, voxel_size, origin)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    group = rank[inverse]
    counts = np.bincount(group)
    out = np.empty((order.size, 3))
    for a in range(3):
        out[:, a] = np.bincount(group, weights=p[:, a]) / counts
    return out


def voxel_downsample(c: PointCloud, grid: VoxelGrid = VoxelGrid()) -> PointCloud:
    return PointCloud(voxel_centroids(c.points, grid.voxel_size, grid.origin), c.frame)


class VoxelDownsampler(TransformerMixin, BaseEstimator):
    """Voxel-grid centroid filter for ``(n, 3)`` point arrays.

    Stateless; ``fit`` only validates the parameters.
    """

    def __init__(self, voxel_size=0.05, origin=(0.0, 0.0, 0.0)):
        self.voxel_size = voxel_size
        self.origin = origin

    def fit(self, X, y=None):
        check_positive(self.voxel_size, "voxel_size")
        check_points(X, "X")
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        return voxel_centroids(X, self.voxel_size, self.origin)


class CloudAccumulator:
    """Running ``X_k``: merges base-frame samples and serves the cloud used for scoring."""

    def __init__(self, frame, grid: VoxelGrid = VoxelGrid()):
        self.grid = grid
        self.raw = PointCloud.empty(frame)
        self._kept = PointCloud.empty(frame)

    def add(self, sample: PointCloud) -> PointCloud:
        self.raw = merge(self.raw, sample)
        if self.grid.order == DOWNSAMPLE_THEN_MERGE:
            self._kept = merge(self._kept, voxel_downsample(sample, self.grid))
            return self._kept
        return voxel_downsample(self.raw, self.grid)
