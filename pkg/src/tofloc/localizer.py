"""One localization trial, end to end.

Every random draw in a trial comes from a stream keyed on
``(trial seed, purpose, sample, sensor)``, so results do not depend on
execution order or on which tip-pose source is used.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from tofloc.cloud import VoxelGrid
from tofloc.environment import (
    DEFAULT_DIMS, DEFAULT_OPEN_FACES, EnvironmentMap, build_cuboid_map, crop,
)
from tofloc.geometry import (
    Frame, PointCloud, Pose2, Pose3, angle_error, pose2_to_pose3, transform_cloud,
)
from tofloc.particle_filter import PER_TRIAL, ParticleFilterLocalizer, PfConfig
from tofloc.registration import NnIndex, ScoreParams
from tofloc.robot import (
    ArmParams, GridSpec, KnnTipRegressor, PressureCommand, enumerate_commands,
    generate_dataset, knn_fit, perturb_tip, split_dataset, synthetic_tip_pose,
)
from tofloc.sensor import NoiseModel, SensorIntrinsics, depth_to_points, simulate_frame

KNN = "knn"
TRUTH = "truth"

# stream purposes
_POSTURES, _INIT_DEV, _FILTER, _TIP, _SENSOR = range(5)


def default_rig(n: int = 3, radius: float = 0.015) -> tuple:
    """Sensors evenly spaced around the tip axis, looking radially outward.

    Sensor ``+z`` points along the radial direction, ``+y`` along the tip axis.
    """
    rig = []
    for i in range(n):
        a = 2 * math.pi * i / n
        radial = np.array([math.cos(a), math.sin(a), 0.0])
        tangent = np.array([-math.sin(a), math.cos(a), 0.0])
        rot = np.column_stack([tangent, [0.0, 0.0, 1.0], radial])
        rig.append(Pose3(rot, radius * radial))
    return tuple(rig)


@dataclass(frozen=True)
class MapConfig:
    dims: tuple = DEFAULT_DIMS
    open_faces: frozenset = DEFAULT_OPEN_FACES
    n_points: int = 2000
    seed: int = 7


@dataclass(frozen=True)
class TrialConfig:
    """Everything one trial needs. ``z_offset`` is the base height above the floor.

    ``commands=None`` draws ``n_samples`` postures from the dataset grid
    without replacement. ``crop_margin=None`` uses the voxel size.
    """

    true_base_pose: Pose2 = Pose2(0.0, 0.0, 0.0)
    z_offset: float = 0.2
    n_samples: int = 10
    commands: tuple | None = None
    tip_source: str = KNN
    rig: tuple = field(default_factory=default_rig)
    pf: PfConfig = PfConfig()
    noise: NoiseModel = NoiseModel()
    score: ScoreParams = ScoreParams()
    voxel: VoxelGrid = VoxelGrid()
    intrinsics: SensorIntrinsics = SensorIntrinsics()
    arm: ArmParams = ArmParams()
    grid: GridSpec = GridSpec()
    map: MapConfig = MapConfig()
    knn_k: int = 6
    dataset_seed: int = 0
    per_sample_scoring: bool = False
    crop_margin: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if self.tip_source not in (KNN, TRUTH):
            raise ValueError(f"tip_source must be {KNN!r} or {TRUTH!r}")


@dataclass(frozen=True)
class TrialResult:
    estimate: Pose2
    e_x: float
    e_gamma: float
    score_mean: tuple
    score_max: tuple
    cloud_sizes: tuple
    final_score_mean: float
    statuses: tuple = ()


@functools.lru_cache(maxsize=8)
def get_map(cfg: MapConfig) -> EnvironmentMap:
    return build_cuboid_map(cfg.dims, cfg.open_faces, cfg.n_points, cfg.seed)


@functools.lru_cache(maxsize=8)
def get_index(cfg: MapConfig) -> NnIndex:
    return NnIndex(get_map(cfg).model_cloud)


@functools.lru_cache(maxsize=8)
def get_dataset(grid: GridSpec, arm: ArmParams, seed: int) -> tuple:
    return tuple(generate_dataset(grid, arm, seed))


@functools.lru_cache(maxsize=8)
def get_model(grid: GridSpec, arm: ArmParams, seed: int, k: int) -> KnnTipRegressor:
    """k-NN model fitted on the 80 % training split of the generated dataset."""
    train, _ = split_dataset(get_dataset(grid, arm, seed), 0.8, seed)
    return knn_fit(train, k)


def stream(trial: TrialConfig, *key) -> np.random.Generator:
    return np.random.default_rng([trial.seed, *key])


def draw_commands(trial: TrialConfig, n: int | None = None) -> tuple:
    if trial.commands is not None:
        return tuple(trial.commands)
    n = trial.n_samples if n is None else n
    pool = enumerate_commands(trial.grid)
    picks = stream(trial, _POSTURES).choice(len(pool), size=n, replace=False)
    return tuple(pool[i] for i in picks)


def crop_box(trial: TrialConfig, env: EnvironmentMap):
    margin = trial.voxel.voxel_size if trial.crop_margin is None else trial.crop_margin
    return env.aabb.inflate(margin)


def nominal_center(trial: TrialConfig) -> Pose2:
    return trial.pf.init_center or trial.true_base_pose


def acquire_sample(trial: TrialConfig, cmd: PressureCommand, sample_index: int = 0,
                   env: EnvironmentMap | None = None,
                   model: KnnTipRegressor | None = None, on_frame=None) -> PointCloud:
    """Simulate all sensors at one posture and return the cropped base-frame cloud.

    Crop happens in the map frame through the nominal base pose (the prior
    center), the only pose knowledge the robot has. ``on_frame(sample, sensor,
    frame)`` sees every raw depth frame.
    """
    env = env or get_map(trial.map)
    base = pose2_to_pose3(trial.true_base_pose, trial.z_offset)
    tip_true = perturb_tip(synthetic_tip_pose(cmd, trial.arm), trial.arm,
                           stream(trial, _TIP, sample_index))
    if trial.tip_source == TRUTH:
        tip_used = tip_true
    else:
        model = model or get_model(trial.grid, trial.arm, trial.dataset_seed, trial.knn_k)
        tip_used = model.predict_pose(cmd)

    parts = []
    for s, mount in enumerate(trial.rig):
        frame = simulate_frame(env, base @ tip_true @ mount, trial.intrinsics, trial.noise,
                               stream(trial, _SENSOR, sample_index, s), sensor_id=f"tof{s}")
        if on_frame is not None:
            on_frame(sample_index, s, frame)
        pts = depth_to_points(frame, trial.intrinsics)
        parts.append(transform_cloud(pts, tip_used @ mount, Frame.BASE).points)
    cloud = PointCloud(np.concatenate(parts), Frame.BASE)

    nominal = pose2_to_pose3(nominal_center(trial), trial.z_offset)
    in_map = crop(transform_cloud(cloud, nominal, Frame.MAP), crop_box(trial, env))
    return transform_cloud(in_map, nominal.inverse(), Frame.BASE)


def acquire_samples(trial: TrialConfig, commands=None, on_frame=None) -> list:
    commands = draw_commands(trial) if commands is None else commands
    env = get_map(trial.map)
    model = None
    if trial.tip_source == KNN:
        model = get_model(trial.grid, trial.arm, trial.dataset_seed, trial.knn_k)
    return [acquire_sample(trial, c, j, env, model, on_frame) for j, c in enumerate(commands)]


def prior_deviations(trial: TrialConfig) -> tuple:
    pf = trial.pf
    if pf.init_dev_mode != PER_TRIAL:
        return pf.init_dev_pos, pf.init_dev_ang
    u = 1.0 - stream(trial, _INIT_DEV).random(2)
    return pf.init_dev_pos * u[0], pf.init_dev_ang * u[1]


def make_localizer(trial: TrialConfig) -> ParticleFilterLocalizer:
    dev_pos, dev_ang = prior_deviations(trial)
    return ParticleFilterLocalizer(
        map_index=get_index(trial.map), n_particles=trial.pf.n_particles,
        init_center=nominal_center(trial), init_dev_pos=dev_pos, init_dev_ang=dev_ang,
        jitter_pos=trial.pf.jitter_pos, jitter_ang=trial.pf.jitter_ang,
        max_correspondence_distance=trial.score.max_correspondence_distance,
        voxel_size=trial.voxel.voxel_size, merge_order=trial.voxel.order,
        per_sample_scoring=trial.per_sample_scoring, z_offset=trial.z_offset,
        random_state=stream(trial, _FILTER),
    )


def run_trial(trial: TrialConfig) -> TrialResult:
    if trial.n_samples < 1:
        raise ValueError("a trial needs at least one sample")
    samples = acquire_samples(trial)
    loc = make_localizer(trial).fit(samples)
    est = loc.estimate_
    truth = trial.true_base_pose
    ps = loc.particles_
    final = float(ps.scores.mean()) if ps.scores is not None else 0.0
    return TrialResult(
        estimate=est,
        e_x=math.hypot(truth.x - est.x, truth.y - est.y),
        e_gamma=angle_error(truth.gamma, est.gamma),
        score_mean=tuple(h["score_mean"] for h in loc.history_),
        score_max=tuple(h["score_max"] for h in loc.history_),
        cloud_sizes=tuple(h["cloud_size"] for h in loc.history_),
        final_score_mean=final,
        statuses=tuple(h["status"] for h in loc.history_),
    )
