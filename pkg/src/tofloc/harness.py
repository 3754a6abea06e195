"""Monte Carlo study runner: many trials per (tip source, sample count) condition."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from tofloc.config import format_config
from tofloc.environment import save_points
from tofloc.geometry import Frame, PointCloud, pose2_to_pose3, transform_cloud
from tofloc.localizer import KNN, TRUTH, TrialConfig, acquire_samples, draw_commands, get_map, run_trial

TRIAL_FIELDS = ("mode", "k", "trial", "seed", "e_x_m", "e_gamma_deg", "final_score_mean")
SUMMARY_FIELDS = ("mode", "k", "n", "e_x_mean_m", "e_x_std_m", "e_gamma_mean_deg", "e_gamma_std_deg")
FLAG_THRESHOLD = 0.01


@dataclass(frozen=True)
class StudyConfig:
    sample_counts: tuple = tuple(range(1, 11))
    trials: int = 50
    modes: tuple = (KNN, TRUTH)
    out_dir: str = "study_out"
    seed: int = 0
    workers: int = 1
    trial: TrialConfig = field(default_factory=TrialConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.sample_counts or min(self.sample_counts) < 1:
            raise ValueError("sample_counts must be a nonempty list of counts >= 1")
        if not self.modes or any(m not in (KNN, TRUTH) for m in self.modes):
            raise ValueError(f"modes must be drawn from {KNN!r}, {TRUTH!r}")


@dataclass(frozen=True)
class TrialRow:
    mode: str
    k: int
    trial: int
    seed: int
    e_x_m: float
    e_gamma_deg: float
    final_score_mean: float


@dataclass(frozen=True)
class ConditionStats:
    mode: str
    k: int
    n: int
    e_x_mean_m: float
    e_x_std_m: float
    e_gamma_mean_deg: float
    e_gamma_std_deg: float


@dataclass
class StudySummary:
    conditions: list
    grand: dict
    rows: list = field(default_factory=list, repr=False)

    def condition(self, mode: str, k: int) -> ConditionStats:
        for c in self.conditions:
            if c.mode == mode and c.k == k:
                return c
        raise KeyError((mode, k))

    @property
    def modes(self) -> list:
        return list(dict.fromkeys(c.mode for c in self.conditions))


def trial_seed(master: int, k: int, trial: int) -> int:
    """Seed shared by both tip sources for the same (k, trial) so the comparison is paired."""
    return int(np.random.SeedSequence([master, k, trial]).generate_state(1)[0])


def _std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def summarize(rows) -> StudySummary:
    groups = {}
    for r in rows:
        groups.setdefault((r.mode, r.k), []).append(r)
    conditions = []
    for (mode, k), rs in groups.items():
        ex = [r.e_x_m for r in rs]
        eg = [r.e_gamma_deg for r in rs]
        conditions.append(ConditionStats(mode, k, len(rs), float(np.mean(ex)), _std(ex),
                                         float(np.mean(eg)), _std(eg)))
    grand = {}
    for mode in dict.fromkeys(r.mode for r in rows):
        ex = [r.e_x_m for r in rows if r.mode == mode]
        eg = [r.e_gamma_deg for r in rows if r.mode == mode]
        grand[mode] = {"n": len(ex), "e_x_mean_m": float(np.mean(ex)), "e_x_std_m": _std(ex),
                       "e_gamma_mean_deg": float(np.mean(eg)), "e_gamma_std_deg": _std(eg)}
    return StudySummary(conditions, grand, list(rows))


def _job(args) -> TrialRow:
    mode, k, t, seed, trial = args
    res = run_trial(trial)
    return TrialRow(mode, k, t, seed, res.e_x, math.degrees(res.e_gamma), res.final_score_mean)


def study_jobs(cfg: StudyConfig) -> list:
    jobs = []
    for mode in cfg.modes:
        for k in cfg.sample_counts:
            for t in range(cfg.trials):
                seed = trial_seed(cfg.seed, k, t)
                trial = dataclasses.replace(cfg.trial, n_samples=k, tip_source=mode, seed=seed)
                jobs.append((mode, k, t, seed, trial))
    return jobs


def _check_writable(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with tempfile.TemporaryFile(dir=out_dir):
            pass
    except OSError as exc:
        raise PermissionError(f"output directory {out_dir} is not writable") from exc


def run_study(cfg: StudyConfig, progress=None) -> StudySummary:
    """Run every (mode, k, trial) combination and write the CSVs, chart and config echo.

    Rows come back ordered by (mode, k, trial) whatever the worker count.
    """
    out = Path(cfg.out_dir)
    _check_writable(out)
    jobs = study_jobs(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = []
            for row in pool.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * cfg.workers))):
                rows.append(row)
                if progress:
                    progress(len(rows), len(jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_job(job))
            if progress:
                progress(len(rows), len(jobs))
    summary = summarize(rows)
    write_trials_csv(out / "trials.csv", rows)
    write_summary_csv(out / "summary.csv", summary)
    write_grand_csv(out / "grand.csv", summary)
    (out / "chart.svg").write_text(bar_chart_svg(summary))
    (out / "config.txt").write_text(study_config_text(cfg))
    return summary


def study_config_text(cfg: StudyConfig) -> str:
    study = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)
             if f.name not in ("trial", "out_dir")}
    head = "\n".join(f"study.{k} = {v!r}" for k, v in study.items())
    return format_config(cfg.trial, "trial settings; rig and posture list use built-in defaults") \
        + head + "\n"


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_trials_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in TRIAL_FIELDS])


def read_trials_csv(path) -> list:
    with open(path, newline="") as fh:
        return [TrialRow(r["mode"], int(r["k"]), int(r["trial"]), int(r["seed"]),
                         float(r["e_x_m"]), float(r["e_gamma_deg"]), float(r["final_score_mean"]))
                for r in csv.DictReader(fh)]


def write_summary_csv(path, summary: StudySummary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for c in summary.conditions:
            w.writerow([_fmt(getattr(c, f)) for f in SUMMARY_FIELDS])


def write_grand_csv(path, summary: StudySummary) -> None:
    fields = ("n", "e_x_mean_m", "e_x_std_m", "e_gamma_mean_deg", "e_gamma_std_deg")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mode",) + fields)
        for mode, g in summary.grand.items():
            w.writerow([mode] + [_fmt(g[f]) for f in fields])


@dataclass
class ModeComparison:
    per_k: list
    grand_delta_e_x: float
    flagged: list

    def format(self) -> str:
        buf = io.StringIO()
        buf.write(f"{'k':>3} {'knn e_x':>10} {'truth e_x':>10} {'|delta|':>10} {'welch t':>8} {'p':>7}\n")
        for r in self.per_k:
            flag = "  <-- differs" if r["flagged"] else ""
            buf.write(f"{r['k']:>3} {r['knn']:>10.4f} {r['truth']:>10.4f} {r['abs_delta']:>10.4f} "
                      f"{r['t_stat']:>8.3f} {r['p_value']:>7.3f}{flag}\n")
        buf.write(f"grand |delta e_x| = {abs(self.grand_delta_e_x):.4f} m\n")
        return buf.getvalue()


def compare_modes(s: StudySummary, threshold: float = FLAG_THRESHOLD) -> ModeComparison:
    """Per-k difference of mean position error between the two tip sources.

    The statistic is Welch's t on the per-trial errors.
    """
    if set(s.modes) != {KNN, TRUTH}:
        raise ValueError("comparison needs a summary with both 'knn' and 'truth' modes")
    per_k = []
    ks = sorted({c.k for c in s.conditions})
    for k in ks:
        a = s.condition(KNN, k)
        b = s.condition(TRUTH, k)
        xa = [r.e_x_m for r in s.rows if r.mode == KNN and r.k == k]
        xb = [r.e_x_m for r in s.rows if r.mode == TRUTH and r.k == k]
        t_stat, p_value = math.nan, math.nan
        if len(xa) > 1 and len(xb) > 1 and (np.var(xa) > 0 or np.var(xb) > 0):
            t_stat, p_value = (float(v) for v in stats.ttest_ind(xa, xb, equal_var=False))
        delta = a.e_x_mean_m - b.e_x_mean_m
        per_k.append({"k": k, "knn": a.e_x_mean_m, "truth": b.e_x_mean_m, "delta": delta,
                      "abs_delta": abs(delta), "t_stat": t_stat, "p_value": p_value,
                      "flagged": abs(delta) > threshold})
    grand = s.grand[KNN]["e_x_mean_m"] - s.grand[TRUTH]["e_x_mean_m"]
    return ModeComparison(per_k, grand, [r["k"] for r in per_k if r["flagged"]])


def export_reconstruction(cfg: TrialConfig, n_samples: int, out_dir) -> dict:
    """Write the merged cloud (placed in the map frame at the true base pose) and the map.

    Returns the written paths keyed ``"reconstruction"`` and ``"map"``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = get_map(cfg.map)
    cloud = PointCloud.empty(Frame.BASE)
    if n_samples > 0:
        samples = acquire_samples(cfg, draw_commands(cfg, n_samples))
        cloud = PointCloud(np.concatenate([s.points for s in samples]), Frame.BASE)
    in_map = transform_cloud(cloud, pose2_to_pose3(cfg.true_base_pose, cfg.z_offset), Frame.MAP)
    paths = {"reconstruction": out / f"reconstruction_k{n_samples}.xyz", "map": out / "map.xyz"}
    save_points(paths["reconstruction"], in_map)
    save_points(paths["map"], env.model_cloud)
    return paths


def bar_chart_svg(s: StudySummary) -> str:
    """Grouped bars of mean error per sample count with one-std whiskers; one panel per metric."""
    modes = s.modes
    ks = sorted({c.k for c in s.conditions})
    colors = {KNN: "#c0392b", TRUTH: "#2c3e50"}
    width, panel_h, margin = 640, 220, 50
    height = 2 * panel_h + 3 * margin
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    metrics = (("e_x_mean_m", "e_x_std_m", "position error (m)"),
               ("e_gamma_mean_deg", "e_gamma_std_deg", "orientation error (deg)"))
    plot_w = width - 2 * margin
    slot = plot_w / max(len(ks), 1)
    bar_w = slot * 0.8 / max(len(modes), 1)
    for p, (mean_f, std_f, label) in enumerate(metrics):
        top = margin + p * (panel_h + margin)
        base = top + panel_h
        vmax = max((getattr(c, mean_f) + getattr(c, std_f) for c in s.conditions), default=1.0)
        vmax = vmax if vmax > 0 else 1.0
        parts.append(f'<text x="{margin}" y="{top - 8}" font-size="12" font-family="sans-serif">'
                     f'{label}</text>')
        parts.append(f'<line x1="{margin}" y1="{base}" x2="{width - margin}" y2="{base}" stroke="black"/>')
        parts.append(f'<line x1="{margin}" y1="{top}" x2="{margin}" y2="{base}" stroke="black"/>')
        parts.append(f'<text x="{margin - 4}" y="{top + 4}" font-size="10" text-anchor="end" '
                     f'font-family="sans-serif">{vmax:.3g}</text>')
        for i, k in enumerate(ks):
            x0 = margin + i * slot + slot * 0.1
            parts.append(f'<text x="{x0 + slot * 0.4:.1f}" y="{base + 14}" font-size="10" '
                         f'text-anchor="middle" font-family="sans-serif">{k}</text>')
            for j, mode in enumerate(modes):
                c = s.condition(mode, k)
                m, sd = getattr(c, mean_f), getattr(c, std_f)
                h = panel_h * m / vmax
                x = x0 + j * bar_w
                parts.append(f'<rect x="{x:.1f}" y="{base - h:.1f}" width="{bar_w:.1f}" '
                             f'height="{h:.1f}" fill="{colors.get(mode, "gray")}"/>')
                xc = x + bar_w / 2
                y_hi = base - panel_h * (m + sd) / vmax
                y_lo = base - panel_h * max(m - sd, 0.0) / vmax
                parts.append(f'<line x1="{xc:.1f}" y1="{y_lo:.1f}" x2="{xc:.1f}" y2="{y_hi:.1f}" '
                             f'stroke="black"/>')
    for j, mode in enumerate(modes):
        parts.append(f'<text x="{width - margin - 80}" y="{20 + 14 * j}" font-size="11" '
                     f'fill="{colors.get(mode, "gray")}" font-family="sans-serif">{mode}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
