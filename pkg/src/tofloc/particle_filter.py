"""SE(2) particle filter weighted by the ICP fitness score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from tofloc.cloud import MERGE_THEN_DOWNSAMPLE, CloudAccumulator, VoxelGrid
from tofloc.geometry import DegenerateWeightsError, Frame, PointCloud, Pose2, circular_mean, wrap_angle
from tofloc.registration import NnIndex, ScoreParams, registration_scores
from tofloc.validation import check_count, check_positive

PER_TRIAL = "per_trial"
FIXED = "fixed"

OK = "ok"
DEGENERATE = "degenerate"
NO_OP = "no_op"


@dataclass(frozen=True)
class PfConfig:
    """Filter settings. ``init_center=None`` centers the prior on the true pose.

    With ``init_dev_mode="per_trial"`` the prior deviations are upper bounds:
    each trial draws its own from ``(0, init_dev_pos]`` and ``(0, init_dev_ang]``.
    """

    n_particles: int = 1000
    init_center: Pose2 | None = None
    init_dev_pos: float = 0.2
    init_dev_ang: float = math.radians(20.0)
    init_dev_mode: str = PER_TRIAL
    jitter_pos: float = 0.02
    jitter_ang: float = math.radians(2.0)
    seed: int = 0

    def __post_init__(self):
        check_count(self.n_particles, "n_particles")
        for name in ("init_dev_pos", "init_dev_ang", "jitter_pos", "jitter_ang"):
            check_positive(getattr(self, name), name, strict=False)
        if self.init_dev_mode not in (PER_TRIAL, FIXED):
            raise ValueError(f"unknown init_dev_mode {self.init_dev_mode!r}")


@dataclass(frozen=True)
class Particle:
    pose: Pose2
    weight: float


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """``poses`` is ``(M, 3)`` rows of ``x, y, gamma``; ``scores`` holds the last raw fitness values."""

    poses: np.ndarray
    weights: np.ndarray
    k: int = 0
    status: str = OK
    scores: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        poses = np.array(self.poses, dtype=float).reshape(-1, 3)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if poses.shape[0] < 1 or w.shape[0] != poses.shape[0]:
            raise ValueError("need M >= 1 poses with one weight each")
        if not (np.all(np.isfinite(poses)) and np.all(np.isfinite(w)) and np.all(w >= 0)):
            raise ValueError("poses and weights must be finite, weights nonnegative")
        poses[:, 2] = wrap_angle(poses[:, 2])
        for a in (poses, w):
            a.flags.writeable = False
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.poses.shape[0]

    @property
    def particles(self) -> list:
        return [Particle(Pose2.from_array(p), float(w)) for p, w in zip(self.poses, self.weights)]


def init_particles(cfg: PfConfig, rng, center: Pose2 | None = None,
                   dev_pos: float | None = None, dev_ang: float | None = None) -> ParticleSet:
    """Gaussian prior around the center with uniform weights."""
    center = center or cfg.init_center or Pose2(0.0, 0.0, 0.0)
    dev_pos = cfg.init_dev_pos if dev_pos is None else dev_pos
    dev_ang = cfg.init_dev_ang if dev_ang is None else dev_ang
    m = cfg.n_particles
    poses = np.empty((m, 3))
    poses[:, 0] = center.x + dev_pos * rng.normal(size=m)
    poses[:, 1] = center.y + dev_pos * rng.normal(size=m)
    poses[:, 2] = center.gamma + dev_ang * rng.normal(size=m)
    return ParticleSet(poses, np.full(m, 1.0 / m))


def update_weights(ps: ParticleSet, cloud_in_base: PointCloud, index: NnIndex,
                   sp: ScoreParams = ScoreParams(), z_offset: float = 0.0) -> ParticleSet:
    """Replace the weights by normalized fitness scores.

    An empty cloud leaves the set untouched (status ``no_op``); all-zero
    scores fall back to uniform weights (status ``degenerate``).
    """
    if cloud_in_base.frame != Frame.BASE:
        raise ValueError(f"expected a base-frame cloud, got {cloud_in_base.frame.value}")
    if len(cloud_in_base) == 0:
        return ParticleSet(ps.poses, ps.weights, ps.k, NO_OP, ps.scores)
    scores = registration_scores(cloud_in_base.points, index, ps.poses, z_offset, sp)
    total = scores.sum()
    if total > 0:
        return ParticleSet(ps.poses, scores / total, ps.k, OK, scores)
    return ParticleSet(ps.poses, np.full(len(ps), 1.0 / len(ps)), ps.k, DEGENERATE, scores)


def resample(ps: ParticleSet, cfg: PfConfig, rng) -> ParticleSet:
    """Multinomial parent draw followed by Gaussian jitter; weights reset to uniform."""
    w = ps.weights
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("cannot resample a set whose weights sum to zero")
    m = len(ps)
    counts = rng.multinomial(m, w / total)
    children = np.repeat(ps.poses, counts, axis=0)
    children[:, 0] += cfg.jitter_pos * rng.normal(size=m)
    children[:, 1] += cfg.jitter_pos * rng.normal(size=m)
    children[:, 2] += cfg.jitter_ang * rng.normal(size=m)
    return ParticleSet(children, np.full(m, 1.0 / m), ps.k + 1)


def estimate(ps: ParticleSet) -> Pose2:
    """Weight-normalized mean position and circular mean heading."""
    w = ps.weights
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("particle weights sum to zero")
    x = float(np.dot(w, ps.poses[:, 0]) / total)
    y = float(np.dot(w, ps.poses[:, 1]) / total)
    return Pose2(x, y, circular_mean(ps.poses[:, 2], w))


class ParticleFilterLocalizer(BaseEstimator):
    """Localize the robot base from a sequence of base-frame cloud samples.

    ``fit`` runs one filter pass: for each sample it grows the merged cloud,
    voxel-downsamples it, reweights the particles, and resamples between
    samples. The estimate uses the final weights, before any resampling.

    Parameters
    ----------
    map_index : NnIndex or PointCloud
        The map cloud (or a prebuilt index over it) in the map frame.
    init_center : Pose2
        Center of the Gaussian prior.
    random_state : int or numpy Generator
        Drives both initialization and resampling, in that order.
    on_update : callable, optional
        Called as ``on_update(k, particle_set)`` after every weight update.
    """

    def __init__(self, map_index=None, n_particles=1000, init_center=Pose2(0.0, 0.0, 0.0),
                 init_dev_pos=0.2, init_dev_ang=math.radians(20.0),
                 jitter_pos=0.02, jitter_ang=math.radians(2.0),
                 max_correspondence_distance=0.05, voxel_size=0.05,
                 merge_order=MERGE_THEN_DOWNSAMPLE, per_sample_scoring=False,
                 z_offset=0.0, random_state=None, on_update=None):
        self.map_index = map_index
        self.n_particles = n_particles
        self.init_center = init_center
        self.init_dev_pos = init_dev_pos
        self.init_dev_ang = init_dev_ang
        self.jitter_pos = jitter_pos
        self.jitter_ang = jitter_ang
        self.max_correspondence_distance = max_correspondence_distance
        self.voxel_size = voxel_size
        self.merge_order = merge_order
        self.per_sample_scoring = per_sample_scoring
        self.z_offset = z_offset
        self.random_state = random_state
        self.on_update = on_update

    def _config(self) -> PfConfig:
        return PfConfig(n_particles=self.n_particles, init_center=self.init_center,
                        init_dev_pos=self.init_dev_pos, init_dev_ang=self.init_dev_ang,
                        init_dev_mode=FIXED, jitter_pos=self.jitter_pos,
                        jitter_ang=self.jitter_ang)

    def fit(self, X, y=None):
        """Run the filter over the samples ``X`` (base-frame PointClouds)."""
        samples = list(X)
        if not samples:
            raise ValueError("need at least one sample")
        index = self.map_index
        if index is None:
            raise ValueError("map_index is required")
        if not isinstance(index, NnIndex):
            index = NnIndex(index)
        rng = np.random.default_rng(self.random_state)
        cfg = self._config()
        sp = ScoreParams(self.max_correspondence_distance)
        acc = CloudAccumulator(Frame.BASE, VoxelGrid(self.voxel_size, order=self.merge_order))

        ps = init_particles(cfg, rng, center=self.init_center)
        history = []
        for j, sample in enumerate(samples):
            merged = acc.add(sample)
            scored = sample if self.per_sample_scoring else merged
            ps = update_weights(ps, scored, index, sp, self.z_offset)
            if self.on_update is not None:
                self.on_update(j + 1, ps)
            sc = ps.scores if ps.status != NO_OP and ps.scores is not None else np.zeros(1)
            history.append({"k": j + 1, "cloud_size": len(scored), "raw_size": len(acc.raw),
                            "score_mean": float(sc.mean()), "score_max": float(sc.max()),
                            "status": ps.status})
            if j < len(samples) - 1:
                ps = resample(ps, cfg, rng)
        self.particles_ = ps
        self.estimate_ = estimate(ps)
        self.history_ = history
        self.merged_cloud_ = acc.raw
        return self
