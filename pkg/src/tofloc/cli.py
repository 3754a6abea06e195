"""Command-line entry point: ``tofloc {study,trial,reconstruct,knn-cv,map}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from tofloc.config import apply_overrides, read_config
from tofloc.environment import save_points
from tofloc.harness import StudyConfig, compare_modes, export_reconstruction, run_study
from tofloc.localizer import (
    KNN, TRUTH, TrialConfig, acquire_samples, draw_commands, get_dataset, get_map,
    make_localizer, nominal_center,
)
from tofloc.geometry import angle_error
from tofloc.robot import kfold_select_k, knn_fit, position_mse, samples_to_arrays, split_dataset
from tofloc.sensor import format_frame

log = logging.getLogger("tofloc")

STUDY_KEYS = {"samples": "sample_counts", "trials": "trials", "modes": "modes",
              "seed": "seed", "workers": "workers"}


def parse_samples(text: str) -> tuple:
    """``"1-10"``, ``"1,2,5"`` or a mix like ``"1-3,8"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty sample list {text!r}")
    return tuple(out)


def load_study_config(args) -> StudyConfig:
    """Defaults, then the config file, then CLI flags."""
    cfg = StudyConfig()
    overrides = read_config(args.config) if args.config else {}
    study_part = {k[len("study."):]: v for k, v in overrides.items() if k.startswith("study.")}
    trial_part = {k: v for k, v in overrides.items() if not k.startswith("study.")}
    trial = apply_overrides(cfg.trial, trial_part)
    fields = {STUDY_KEYS.get(k, k): v for k, v in study_part.items()}
    if "sample_counts" in fields:
        fields["sample_counts"] = tuple(fields["sample_counts"])
    if "modes" in fields:
        fields["modes"] = tuple(fields["modes"])
    cfg = dataclasses.replace(cfg, trial=trial, **fields)

    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed,
                                  trial=dataclasses.replace(cfg.trial, seed=args.seed))
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if args.mode is not None:
        cfg = dataclasses.replace(cfg, modes=(KNN, TRUTH) if args.mode == "both" else (args.mode,))
    if args.samples is not None:
        cfg = dataclasses.replace(cfg, sample_counts=args.samples)
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, trials=args.trials)
    if args.noise is not None:
        cfg = dataclasses.replace(cfg, trial=apply_overrides(
            cfg.trial, {"noise.sigma_fraction": args.noise}))
    if getattr(args, "workers", None) is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return cfg


def cmd_study(args) -> int:
    cfg = load_study_config(args)
    total = len(cfg.modes) * len(cfg.sample_counts) * cfg.trials
    log.info("running %d trials into %s", total, cfg.out_dir)

    def progress(done, n):
        if done % max(1, n // 20) == 0 or done == n:
            log.info("%d/%d trials", done, n)

    summary = run_study(cfg, progress)
    print(f"{'mode':>6} {'k':>3} {'e_x mean':>10} {'e_x std':>9} {'e_g mean':>9} {'e_g std':>8}")
    for c in summary.conditions:
        print(f"{c.mode:>6} {c.k:>3} {c.e_x_mean_m:>10.4f} {c.e_x_std_m:>9.4f} "
              f"{c.e_gamma_mean_deg:>9.3f} {c.e_gamma_std_deg:>8.3f}")
    for mode, g in summary.grand.items():
        print(f"{mode}: e_x = {g['e_x_mean_m']:.4f} +- {g['e_x_std_m']:.4f} m, "
              f"e_gamma = {g['e_gamma_mean_deg']:.3f} +- {g['e_gamma_std_deg']:.3f} deg")
    if set(summary.modes) == {KNN, TRUTH}:
        print(compare_modes(summary).format(), end="")
    return 0


def cmd_trial(args) -> int:
    cfg = load_study_config(args)
    mode = cfg.modes[0]
    trial = dataclasses.replace(cfg.trial, n_samples=cfg.sample_counts[-1], tip_source=mode,
                                seed=cfg.seed)
    dump = Path(args.out) if args.out else None
    if dump:
        dump.mkdir(parents=True, exist_ok=True)
    commands = draw_commands(trial)
    frames = {}
    samples = acquire_samples(trial, commands,
                              on_frame=lambda j, s, f: frames.__setitem__((j, s), f))

    def on_update(k, ps):
        if dump:
            rows = np.column_stack([ps.poses[:, :2], np.degrees(ps.poses[:, 2]), ps.weights])
            np.savetxt(dump / f"particles_k{k:02d}.txt", rows, fmt="%.9g")

    loc = make_localizer(trial)
    loc.set_params(on_update=on_update)
    loc.fit(samples)
    if dump:
        for (j, s), frame in sorted(frames.items()):
            (dump / f"frame_k{j + 1:02d}_tof{s}.txt").write_text(format_frame(frame))
    for h in loc.history_:
        print(f"k={h['k']:>2} cloud={h['cloud_size']:>4} raw={h['raw_size']:>5} "
              f"score mean={h['score_mean']:.3f} max={h['score_max']:.3f} {h['status']}")
    est, truth = loc.estimate_, trial.true_base_pose
    print(f"prior center: {nominal_center(trial)}")
    print(f"estimate: x={est.x:.4f} y={est.y:.4f} gamma={math.degrees(est.gamma):.3f} deg")
    print(f"e_x = {math.hypot(est.x - truth.x, est.y - truth.y):.4f} m, "
          f"e_gamma = {math.degrees(angle_error(est.gamma, truth.gamma)):.3f} deg")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = load_study_config(args)
    n = args.samples[-1] if args.samples else 50
    trial = dataclasses.replace(cfg.trial, tip_source=cfg.modes[0], seed=cfg.seed)
    paths = export_reconstruction(trial, n, args.out or "reconstruction")
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_knn_cv(args) -> int:
    cfg = load_study_config(args)
    t = cfg.trial
    data = get_dataset(t.grid, t.arm, t.dataset_seed)
    train, val = split_dataset(data, 0.8, t.dataset_seed)
    best, table = kfold_select_k(train, folds=args.folds, candidates=range(1, args.max_k + 1),
                                 seed=cfg.seed)
    print(f"dataset: {len(data)} postures ({len(train)} train / {len(val)} validation)")
    print(f"{'k':>3} {'cv MSE (m^2)':>14}")
    for k, mse in table.items():
        print(f"{k:>3} {mse:>14.3e}{'  <- best' if k == best else ''}")
    for k in sorted({best, t.knn_k}):
        model = knn_fit(train, k)
        Xt, Yt = samples_to_arrays(train)
        Xv, Yv = samples_to_arrays(val)
        print(f"k={k}: train MSE {position_mse(model.predict(Xt), Yt):.3e}, "
              f"validation MSE {position_mse(model.predict(Xv), Yv):.3e}")
    return 0


def cmd_map(args) -> int:
    cfg = load_study_config(args)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    env = get_map(cfg.trial.map)
    path = out / "map.xyz"
    save_points(path, env.model_cloud)
    print(f"{len(env.model_cloud)} points -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=(KNN, TRUTH, "both"),
                        help="tip-pose source for merging samples")
    common.add_argument("--samples", type=parse_samples,
                        help="sample counts, e.g. 1-10 or 1,5,10")
    common.add_argument("--trials", type=int, help="trials per condition")
    common.add_argument("--noise", type=float, help="range noise std as a fraction of distance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tofloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("study", parents=[common], help="full Monte Carlo reproduction")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("trial", parents=[common], help="one verbose trial; --out dumps particles and frames")
    p.set_defaults(func=cmd_trial)
    p = sub.add_parser("reconstruct", parents=[common], help="export a merged cloud and the map")
    p.set_defaults(func=cmd_reconstruct)
    p = sub.add_parser("knn-cv", parents=[common], help="k-fold selection of the k-NN neighbor count")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-k", type=int, default=15)
    p.set_defaults(func=cmd_knn_cv)
    p = sub.add_parser("map", parents=[common], help="export the map point cloud")
    p.set_defaults(func=cmd_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
