"""Soft-arm surrogate, posture dataset and the k-NN tip-pose regressor.

A three-chamber bellows arm is modelled as a single constant-curvature
segment. Chamber pressures combine into a bending vector whose magnitude
sets the curvature and whose direction sets the bending plane. Each
physical realization of a command also carries a small isotropic tip
position scatter (``repeatability``) so the regressor has something to
average over, as it would on hardware.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from tofloc.geometry import Pose3, project_to_rotation, rot_y, rot_z
from tofloc.validation import check_count

SQRT3_2 = math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class PressureCommand:
    """Chamber pressures in kPa."""

    p1: float
    p2: float
    p3: float

    def __post_init__(self):
        for name in ("p1", "p2", "p3"):
            v = float(getattr(self, name))
            if not v >= 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])


@dataclass(frozen=True)
class TipSample:
    command: PressureCommand
    tip_pose: Pose3


@dataclass(frozen=True)
class ArmParams:
    length: float = 0.10
    # rad / (m kPa); 40 degrees of tip deflection at 18 kPa in one chamber
    curvature_gain: float = math.radians(40.0) / (0.10 * 18.0)
    repeatability: float = 0.01


@dataclass(frozen=True)
class GridSpec:
    p_min: int = 3
    p_max: int = 18
    step: int = 1
    single_chamber: bool = True
    chamber_pairs: tuple = ((0, 1), (0, 2), (1, 2))

    @property
    def levels(self) -> list:
        return list(range(self.p_min, self.p_max + 1, self.step))


def bending(cmd: PressureCommand) -> tuple:
    """Return ``(a, b)``: the in-plane components of the chamber imbalance."""
    a = cmd.p1 - (cmd.p2 + cmd.p3) / 2.0
    b = SQRT3_2 * (cmd.p2 - cmd.p3)
    return a, b


def synthetic_tip_pose(cmd: PressureCommand, arm: ArmParams = ArmParams()) -> Pose3:
    """Noise-free tip pose of the constant-curvature arm, relative to its base."""
    a, b = bending(cmd)
    kappa = arm.curvature_gain * math.hypot(a, b)
    if kappa == 0.0:
        return Pose3(np.eye(3), (0.0, 0.0, arm.length))
    phi = math.atan2(b, a)
    theta = kappa * arm.length
    r = (1.0 - math.cos(theta)) / kappa
    pos = (r * math.cos(phi), r * math.sin(phi), math.sin(theta) / kappa)
    rot = rot_z(phi) @ rot_y(theta) @ rot_z(-phi)
    return Pose3(project_to_rotation(rot), pos)


def perturb_tip(pose: Pose3, arm: ArmParams, rng) -> Pose3:
    """One physical realization: the nominal pose plus position scatter."""
    jitter = rng.normal(0.0, 1.0, 3) * arm.repeatability
    return Pose3(pose.rotation, pose.translation + jitter)


def enumerate_commands(grid: GridSpec = GridSpec()) -> list:
    """Single-chamber sweeps, then every level combination of each chamber pair."""
    levels = grid.levels
    out = []
    if grid.single_chamber:
        for ch in range(3):
            for p in levels:
                v = [0.0, 0.0, 0.0]
                v[ch] = p
                out.append(PressureCommand(*v))
    for i, j in grid.chamber_pairs:
        for pi, pj in itertools.product(levels, levels):
            v = [0.0, 0.0, 0.0]
            v[i], v[j] = pi, pj
            out.append(PressureCommand(*v))
    return out


def generate_dataset(grid: GridSpec = GridSpec(), arm: ArmParams = ArmParams(), seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [TipSample(c, perturb_tip(synthetic_tip_pose(c, arm), arm, rng))
            for c in enumerate_commands(grid)]


def samples_to_arrays(samples) -> tuple:
    """``X`` of shape (n, 3) pressures and ``Y`` of shape (n, 12): translation then row-major rotation."""
    X = np.array([s.command.as_array() for s in samples]).reshape(-1, 3)
    Y = np.array([np.concatenate([s.tip_pose.translation, s.tip_pose.rotation.ravel()])
                  for s in samples]).reshape(-1, 12)
    return X, Y


def row_to_pose(row) -> Pose3:
    return Pose3(np.asarray(row[3:]).reshape(3, 3), row[:3])


def position_mse(y_pred, y_true) -> float:
    """Mean squared Euclidean tip-position error, in m^2."""
    diff = np.asarray(y_pred)[:, :3] - np.asarray(y_true)[:, :3]
    return float(np.mean(np.sum(diff ** 2, axis=1)))


class KnnTipRegressor(RegressorMixin, BaseEstimator):
    """Predict tip poses by averaging the ``n_neighbors`` closest training commands.

    Positions are averaged arithmetically; rotations by the chordal mean
    (mean matrix projected back onto SO(3)). Distance ties go to the sample
    that appears first in the training set.
    """

    def __init__(self, n_neighbors=6):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or y.ndim != 2 or X.shape[0] != y.shape[0] or y.shape[1] != 12:
            raise ValueError(f"expected X (n, d) and y (n, 12), got {X.shape} and {y.shape}")
        k = check_count(self.n_neighbors, "n_neighbors")
        if k > X.shape[0]:
            raise ValueError(f"n_neighbors={k} exceeds the {X.shape[0]} training samples")
        self.X_train_ = X.copy()
        self.y_train_ = y.copy()
        self.n_features_in_ = X.shape[1]
        return self

    def kneighbors(self, X) -> np.ndarray:
        check_is_fitted(self, "X_train_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d2 = ((X[:, None, :] - self.X_train_[None, :, :]) ** 2).sum(axis=2)
        return np.argsort(d2, axis=1, kind="stable")[:, :self.n_neighbors]

    def predict(self, X) -> np.ndarray:
        idx = self.kneighbors(X)
        nb = self.y_train_[idx]
        out = np.empty((idx.shape[0], 12))
        out[:, :3] = nb[:, :, :3].mean(axis=1)
        for i in range(idx.shape[0]):
            out[i, 3:] = project_to_rotation(nb[i, :, 3:].mean(axis=0).reshape(3, 3)).ravel()
        return out

    def predict_pose(self, cmd: PressureCommand) -> Pose3:
        return row_to_pose(self.predict(cmd.as_array()[None, :])[0])

    def score(self, X, y, sample_weight=None):
        """Negative position MSE, so that larger is better."""
        return -position_mse(self.predict(X), y)


def knn_fit(data, k: int = 6) -> KnnTipRegressor:
    X, Y = samples_to_arrays(data)
    return KnnTipRegressor(n_neighbors=k).fit(X, Y)


def knn_predict(model: KnnTipRegressor, cmd: PressureCommand) -> Pose3:
    return model.predict_pose(cmd)


def split_dataset(data, train_fraction: float = 0.8, seed: int = 0) -> tuple:
    return tuple(train_test_split(list(data), train_size=train_fraction, random_state=seed))


def fold_assignment(n: int, folds: int, seed: int = 0) -> np.ndarray:
    """Round-robin folds over a seeded shuffle."""
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=int)
    out[perm] = np.arange(n) % folds
    return out


def kfold_select_k(data, folds: int = 5, candidates=range(1, 16), seed: int = 0) -> tuple:
    """Cross-validate ``n_neighbors``; returns the best k and a ``{k: mean MSE}`` table.

    Candidates larger than the smallest training fold are skipped.
    """
    X, Y = samples_to_arrays(data)
    n = X.shape[0]
    folds = check_count(folds, "folds", minimum=2)
    if n < folds:
        raise ValueError(f"need at least {folds} samples, got {n}")
    assign = fold_assignment(n, folds, seed)
    min_train = n - np.bincount(assign).max()
    table = {}
    for k in candidates:
        if k > min_train:
            continue
        errs = []
        for f in range(folds):
            tr, va = assign != f, assign == f
            model = KnnTipRegressor(n_neighbors=k).fit(X[tr], Y[tr])
            errs.append(position_mse(model.predict(X[va]), Y[va]))
        table[int(k)] = float(np.mean(errs))
    if not table:
        raise ValueError("no candidate k fits inside the training folds")
    best = min(table, key=lambda k: (table[k], k))
    return best, table


DATASET_FIELDS = ("p1", "p2", "p3", "tx", "ty", "tz", "qw", "qx", "qy", "qz")


def save_dataset(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_FIELDS)
        for s in samples:
            qx, qy, qz, qw = Rotation.from_matrix(s.tip_pose.rotation).as_quat()
            w.writerow([repr(float(v)) for v in (*s.command.as_array(), *s.tip_pose.translation,
                                                 qw, qx, qy, qz)])


def load_dataset(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            v = {k: float(row[k]) for k in DATASET_FIELDS}
            rot = Rotation.from_quat([v["qx"], v["qy"], v["qz"], v["qw"]]).as_matrix()
            out.append(TipSample(PressureCommand(v["p1"], v["p2"], v["p3"]),
                                 Pose3(project_to_rotation(rot), (v["tx"], v["ty"], v["tz"]))))
    return out
