import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tofloc.cloud import (
    DOWNSAMPLE_THEN_MERGE, CloudAccumulator, VoxelDownsampler, VoxelGrid, merge,
    voxel_downsample,
)
from tofloc.geometry import Frame, FrameMismatchError, PointCloud


def hash_voxels(points, size, origin=(0.0, 0.0, 0.0)):
    """Dictionary bucketing, first-occurrence order, plain Python sums."""
    buckets = {}
    for p in points.tolist():
        key = tuple(math.floor((p[a] - origin[a]) / size) for a in range(3))
        buckets.setdefault(key, []).append(p)
    keys = list(buckets)
    cents = []
    for k in keys:
        pts = buckets[k]
        sums = [0.0, 0.0, 0.0]
        for p in pts:
            for a in range(3):
                sums[a] += p[a]
        cents.append([s / len(pts) for s in sums])
    return keys, np.array(cents), buckets


def test_merge_basics(rng):
    a = PointCloud(rng.normal(size=(5, 3)), Frame.BASE)
    s = PointCloud(rng.normal(size=(7, 3)), Frame.BASE)
    empty = PointCloud.empty(Frame.BASE)
    assert merge(empty, s) == s
    assert merge(a, empty) == a
    m = merge(a, s)
    assert len(m) == 12
    np.testing.assert_array_equal(m.points[:5], a.points)


def test_merge_frame_mismatch(rng):
    with pytest.raises(FrameMismatchError):
        merge(PointCloud.empty(Frame.BASE), PointCloud.empty(Frame.MAP))


@given(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20))
def test_merge_associative_as_multisets(na, nb, nc):
    rng = np.random.default_rng(na * 441 + nb * 21 + nc)
    a, b, c = (PointCloud(rng.normal(size=(n, 3)), Frame.BASE) for n in (na, nb, nc))
    left = merge(merge(a, b), c)
    right = merge(a, merge(b, c))
    assert Counter(map(tuple, left.points.tolist())) == Counter(map(tuple, right.points.tolist()))


def test_single_voxel_centroid():
    pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.03, 0.04], [0.03, 0.02, 0.01]])
    out = voxel_downsample(PointCloud(pts, Frame.BASE))
    np.testing.assert_allclose(out.points, [pts.mean(axis=0)], atol=1e-17)


def test_sparse_grid_is_identity():
    g = np.stack(np.meshgrid(*[np.arange(4) * 0.12 + 0.01] * 3, indexing="ij"), -1).reshape(-1, 3)
    out = voxel_downsample(PointCloud(g, Frame.BASE))
    np.testing.assert_array_equal(out.points, g)


def test_matches_hash_map_oracle(rng):
    pts = rng.uniform((-0.35, -0.35, 0.0), (0.35, 0.35, 0.6), size=(1920, 3))
    out = voxel_downsample(PointCloud(pts, Frame.MAP), VoxelGrid(0.05))
    keys, cents, buckets = hash_voxels(pts, 0.05)
    assert len(out) == len(keys)
    np.testing.assert_allclose(out.points, cents, rtol=0, atol=1e-15)
    for k, c in zip(keys, out.points):
        centre = (np.array(k) + 0.5) * 0.05
        assert np.linalg.norm(c - centre) <= 0.05 * math.sqrt(3) / 2 + 1e-15
        inp = np.array(buckets[k])
        assert np.all(c >= inp.min(axis=0) - 1e-15) and np.all(c <= inp.max(axis=0) + 1e-15)


def test_oracle_with_origin_offset(rng):
    origin = (0.013, -0.02, 0.007)
    pts = rng.uniform(-0.3, 0.3, size=(500, 3))
    out = voxel_downsample(PointCloud(pts, Frame.MAP), VoxelGrid(0.04, origin))
    keys, cents, _ = hash_voxels(pts, 0.04, origin)
    np.testing.assert_allclose(out.points, cents, rtol=0, atol=1e-15)


def test_idempotent_on_clustered_fixture(rng):
    # tight clusters around voxel centers keep every centroid in its own voxel
    centres = (rng.integers(-5, 5, size=(40, 3)) + 0.5) * 0.05
    pts = np.repeat(centres, 6, axis=0) + rng.uniform(-0.01, 0.01, size=(240, 3))
    once = voxel_downsample(PointCloud(pts, Frame.BASE))
    twice = voxel_downsample(once)
    assert once == twice


def test_empty_and_bad_grid():
    assert len(voxel_downsample(PointCloud.empty(Frame.BASE))) == 0
    with pytest.raises(ValueError):
        VoxelGrid(0.0)


def test_transformer_api(rng):
    pts = rng.uniform(0, 1, size=(300, 3))
    vd = VoxelDownsampler(voxel_size=0.1)
    out = vd.fit_transform(pts)
    _, cents, _ = hash_voxels(pts, 0.1)
    np.testing.assert_allclose(out, cents, atol=1e-15)
    assert vd.get_params()["voxel_size"] == 0.1


def test_accumulator_orders(rng):
    samples = [PointCloud(rng.uniform(0, 0.3, (100, 3)), Frame.BASE) for _ in range(3)]
    acc = CloudAccumulator(Frame.BASE, VoxelGrid(0.05))
    for s in samples:
        out = acc.add(s)
    raw = np.concatenate([s.points for s in samples])
    assert acc.raw.points.shape == raw.shape
    assert out == voxel_downsample(PointCloud(raw, Frame.BASE))

    acc2 = CloudAccumulator(Frame.BASE, VoxelGrid(0.05, order=DOWNSAMPLE_THEN_MERGE))
    for s in samples:
        out2 = acc2.add(s)
    assert len(out2) == sum(len(voxel_downsample(s)) for s in samples)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(0.01, 0.2))
def test_output_never_larger_than_input(seed, size):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.5, 0.5, size=(int(rng.integers(1, 400)), 3))
    out = voxel_downsample(PointCloud(pts, Frame.BASE), VoxelGrid(size))
    assert 1 <= len(out) <= len(pts)
