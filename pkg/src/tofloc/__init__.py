"""Soft-arm base localization from simulated multizone time-of-flight sensors."""

from tofloc.cloud import VoxelDownsampler, VoxelGrid, merge, voxel_downsample
from tofloc.environment import Aabb, EnvironmentMap, build_cuboid_map, crop, ray_cast
from tofloc.geometry import (
    DegenerateWeightsError, Frame, FrameMismatchError, PointCloud, Pose2, Pose3,
    circular_mean, pose2_to_pose3, transform_cloud,
)
from tofloc.localizer import TrialConfig, TrialResult, acquire_sample, run_trial
from tofloc.particle_filter import (
    ParticleFilterLocalizer, ParticleSet, PfConfig, estimate, init_particles, resample,
    update_weights,
)
from tofloc.registration import NnIndex, ScoreParams, build_index, registration_score
from tofloc.robot import (
    KnnTipRegressor, PressureCommand, generate_dataset, kfold_select_k, knn_fit, knn_predict,
    synthetic_tip_pose,
)
from tofloc.sensor import (
    DepthFrame, NoiseModel, SensorIntrinsics, depth_to_points, simulate_frame, zone_directions,
)

__version__ = "0.1.0"
