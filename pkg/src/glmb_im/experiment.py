"""Paired Monte Carlo runs of the two filter variants and result export.

Both variants see exactly the same rendered frames in a given run.  All
randomness derives from one master seed through ``SeedSequence`` so a
report is a pure function of (config, master seed, runs).
"""

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import VARIANTS, build_model, build_scenario, ospa_params
from .gaussian import NumericError
from .glmb import GlmbFilter
from .models import HybridObservation
from .ospa import ospa
from .rfs import DegenerateDensityError, estimate_multi_bernoulli, snapshot
from .simulator import detect, generate_truth, low_snr_frames, occlusion_frames, render_truth_frame

log = logging.getLogger(__name__)

FRAME_COLUMNS = ("run", "variant", "frame", "ospa", "loc", "card", "n_est", "n_true", "hard", "checksum")
TRACK_COLUMNS = ("frame", "run", "variant", "label_birth_time", "label_index", "x", "y", "exist_prob")


@dataclass(frozen=True)
class RunSeeds:
    run: int
    render: int
    filter: int
    truth: int


def run_seeds(master_seed, runs):
    """Independent per-run seeds spawned from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(runs)
    out = []
    for i, child in enumerate(children):
        truth, render, filt = (int(s.generate_state(1, np.uint64)[0]) for s in child.spawn(3))
        out.append(RunSeeds(i, render, filt, truth))
    return out


@dataclass
class SimulatedRun:
    truth: list
    frames: list
    detections: list

    @property
    def checksums(self):
        return [f.checksum() for f in self.frames]


def simulate_run(cfg, render_seed, truth_seed=0):
    """Truth, rendered frames and thresholded detections for one run."""
    scenario = build_scenario(cfg)
    truth = generate_truth(scenario, truth_seed)
    frame_seeds = np.random.SeedSequence(render_seed).spawn(len(truth))
    frames, dets = [], []
    sigma_n = cfg["scenario"]["sigma_n"]
    for tf, ss in zip(truth, frame_seeds):
        rf = render_truth_frame(tf, scenario, np.random.default_rng(ss), sigma_n)
        frames.append(rf)
        dets.append(detect(rf, cfg["scenario"]["threshold"]))
    return SimulatedRun(truth, frames, dets)


def hard_frames(cfg, truth):
    """Frames with an occlusion or an object in the low-SNR region."""
    scenario = build_scenario(cfg)
    return occlusion_frames(truth, cfg["occlusion_distance"]) | low_snr_frames(truth, scenario)


def track_sequence(cfg, variant, frames, detections, filter_seed, snapshots=False):
    """Run one filter over a frame sequence.

    Returns ``(estimates per frame, snapshot records or None)``; estimates
    are lists of :class:`~glmb_im.rfs.Estimate`.
    """
    model = build_model(cfg, variant)
    fl = cfg["filter"]
    filt = GlmbFilter(
        model, cfg["h_max"], np.random.default_rng(filter_seed), fl["min_weight"],
        fl["template_alpha"], fl["confident"], fl["template_init"],
    )
    estimates, snaps = [], [] if snapshots else None
    for pixels, Z in zip(frames, detections):
        image = pixels.pixels if hasattr(pixels, "pixels") else pixels
        density = filt.step(HybridObservation(image, Z))
        estimates.append(estimate_multi_bernoulli(density, fl["existence_threshold"]))
        if snapshots:
            snaps.append(snapshot(density, variant=variant))
    return estimates, snaps


def _run_one(args):
    cfg, seeds, variants = args
    sim = simulate_run(cfg, seeds.render, seeds.truth)
    hard = hard_frames(cfg, sim.truth)
    params = ospa_params(cfg)
    checks = sim.checksums
    frame_rows, track_rows, failed, timing = [], [], [], {}
    for variant in variants:
        t0 = time.perf_counter()
        try:
            estimates, _ = track_sequence(cfg, variant, sim.frames, sim.detections, seeds.filter)
        except (NumericError, DegenerateDensityError, np.linalg.LinAlgError) as exc:
            log.warning("run %d variant %s failed: %s", seeds.run, variant, exc)
            failed.append(variant)
            continue
        finally:
            timing[variant] = time.perf_counter() - t0
        for tf, est, chk in zip(sim.truth, estimates, checks):
            total, loc, card = ospa([e.position for e in est], tf.positions, params)
            frame_rows.append({
                "run": seeds.run, "variant": variant, "frame": tf.frame,
                "ospa": total, "loc": loc, "card": card,
                "n_est": len(est), "n_true": len(tf.labels),
                "hard": int(tf.frame in hard), "checksum": chk,
            })
            for e in est:
                track_rows.append({
                    "frame": tf.frame, "run": seeds.run, "variant": variant,
                    "label_birth_time": e.label.birth_time, "label_index": e.label.birth_index,
                    "x": float(e.position[0]), "y": float(e.position[1]),
                    "exist_prob": float(e.existence),
                })
    return seeds.run, frame_rows, track_rows, failed, timing


@dataclass
class RunReport:
    config: dict
    master_seed: int
    runs: int
    variants: tuple
    seeds: list
    frame_rows: list = field(default_factory=list)
    track_rows: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    @property
    def aggregate(self):
        return aggregate_rows(self.frame_rows, self.variants, self.failed, self.runs)


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return None, None
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def aggregate_rows(frame_rows, variants, failed=None, runs=None):
    """Monte Carlo summaries recomputed from per-frame rows alone.

    Standard errors are across runs (each run's frame average is one
    sample), so they reflect the paired Monte Carlo design.
    """
    failed = failed or {}
    out = {}
    for variant in variants:
        rows = [r for r in frame_rows if r["variant"] == variant]
        by_run = {}
        for r in rows:
            by_run.setdefault(int(r["run"]), []).append(r)
        per_run = {
            key: [np.mean([float(r[key]) for r in rs]) for _, rs in sorted(by_run.items())]
            for key in ("ospa", "loc", "card")
        }
        hard_run = [
            np.mean([float(r["ospa"]) for r in rs if int(r["hard"])])
            for _, rs in sorted(by_run.items())
            if any(int(r["hard"]) for r in rs)
        ]
        card_ok = [abs(int(r["n_est"]) - int(r["n_true"])) <= 1 for r in rows]
        frames = sorted({int(r["frame"]) for r in rows})
        curve = {}
        for key in ("ospa", "loc", "card"):
            curve[key] = [
                float(np.mean([float(r[key]) for r in rows if int(r["frame"]) == f])) for f in frames
            ]
        summary = {
            "runs_completed": len(by_run),
            "runs_failed": len([f for f in failed.values() if variant in f]),
            "frames": frames,
            "per_frame_mean": curve,
            "cardinality_within_one": float(np.mean(card_ok)) if card_ok else None,
        }
        for key in ("ospa", "loc", "card"):
            summary[f"mean_{key}"], summary[f"se_{key}"] = _mean_se(per_run[key])
        summary["hard_mean_ospa"], summary["hard_se_ospa"] = _mean_se(hard_run)
        out[variant] = summary
    if runs is not None:
        out["runs_requested"] = runs
    return out


def run_monte_carlo(cfg, variants=VARIANTS, runs=None, seed=None, workers=None):
    """Paired Monte Carlo comparison of ``variants``.

    Runs may execute in worker processes; results are reduced in run order,
    so the report does not depend on scheduling.
    """
    runs = cfg["runs"] if runs is None else runs
    seed = cfg["seed"] if seed is None else seed
    workers = cfg["workers"] if workers is None else workers
    variants = tuple(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    seeds = run_seeds(seed, runs)
    jobs = [(cfg, s, variants) for s in seeds]
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    report = RunReport(cfg, seed, runs, variants, seeds)
    for run, frames, tracks, failed, timing in sorted(results, key=lambda r: r[0]):
        failed_set = set(failed)
        report.frame_rows.extend(r for r in frames if r["variant"] not in failed_set)
        report.track_rows.extend(r for r in tracks if r["variant"] not in failed_set)
        if failed:
            report.failed[run] = sorted(failed)
        report.wall_clock[run] = timing
    return report


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_report(report, out_dir):
    """Persist a report.

    ``frames.csv``, ``tracks.csv`` and ``report.json`` are deterministic;
    wall-clock times go to ``timing.json`` so reruns compare byte-equal.
    """
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "frames.csv"), FRAME_COLUMNS, report.frame_rows)
    write_csv(os.path.join(out_dir, "tracks.csv"), TRACK_COLUMNS, report.track_rows)
    doc = {
        "master_seed": report.master_seed,
        "runs": report.runs,
        "variants": list(report.variants),
        "seeds": [vars(s) for s in report.seeds],
        "failed_runs": {str(k): v for k, v in sorted(report.failed.items())},
        "aggregate": report.aggregate,
        "config": report.config,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "timing.json"), "w") as fh:
        json.dump({str(k): v for k, v in sorted(report.wall_clock.items())}, fh, indent=2)
        fh.write("\n")
    return out_dir
