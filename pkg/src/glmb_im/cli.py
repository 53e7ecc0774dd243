"""Command line entry point: ``glmb-im <command> [options]``.

Failures print one JSON line ``{"error": ..., "key": ..., "message": ...}``
on stderr and exit nonzero.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .battery import run_battery
from .config import VARIANTS, ConfigError, load_config, ospa_params, resolve_seed
from .experiment import (
    TRACK_COLUMNS,
    read_csv,
    run_monte_carlo,
    run_seeds,
    simulate_run,
    track_sequence,
    write_csv,
    write_report,
)
from .models import write_pgm
from .ospa import ospa

TRUTH_COLUMNS = ("frame", "label_birth_time", "label_index", "x", "y")
DETECTION_COLUMNS = ("frame", "id", "x", "y")
OSPA_COLUMNS = ("frame", "ospa", "loc", "card", "n_est", "n_true")


class CliError(Exception):
    def __init__(self, code, message, key=None):
        super().__init__(message)
        self.code = code
        self.key = key


def _common(p):
    p.add_argument("--config", help="JSON config overriding the defaults")
    p.add_argument("--seed", type=int, help="master seed (beats the environment and the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--h-max", type=int, dest="h_max", help="max GLMB components (default 200)")


def build_parser():
    parser = argparse.ArgumentParser(prog="glmb-im", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render one run of the scenario to disk")
    _common(p)
    p.add_argument("--run", type=int, default=0, help="run index within the master seed")
    p.add_argument("--pgm", action="store_true", help="also dump frames as 16-bit PGM")

    p = sub.add_parser("track", help="run one filter over simulated frames")
    _common(p)
    p.add_argument("--input", required=True, help="directory written by 'simulate'")
    p.add_argument("--variant", choices=VARIANTS, default="glmb-im")

    p = sub.add_parser("eval", help="per-frame OSPA between a track CSV and a truth CSV")
    _common(p)
    p.add_argument("--tracks", required=True)
    p.add_argument("--truth", required=True)

    p = sub.add_parser("mc", help="paired Monte Carlo comparison of both variants")
    _common(p)
    p.add_argument("--runs", type=int, help="Monte Carlo runs (default 20)")
    p.add_argument("--variant", choices=VARIANTS, action="append",
                   help="restrict to a variant (repeatable; default both)")
    p.add_argument("--workers", type=int, help="worker processes")

    p = sub.add_parser("oracle-check", help="Gibbs truncation vs exhaustive update on small instances")
    _common(p)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--trials", type=int, default=10**4)
    p.add_argument("--tolerance", type=float, default=0.05)
    return parser


def _load(args):
    cfg = load_config(args.config)
    cfg["seed"] = resolve_seed(cfg, args.seed)
    if args.h_max is not None:
        if args.h_max < 1:
            raise ConfigError("--h-max", "must be at least 1")
        cfg["h_max"] = args.h_max
    return cfg


def cmd_simulate(args):
    cfg = _load(args)
    seeds = run_seeds(cfg["seed"], args.run + 1)[args.run]
    sim = simulate_run(cfg, seeds.render, seeds.truth)
    os.makedirs(args.out, exist_ok=True)
    np.savez_compressed(os.path.join(args.out, "frames.npz"),
                        pixels=np.stack([f.pixels for f in sim.frames]),
                        frames=np.array([t.frame for t in sim.truth]))
    truth_rows = [
        {"frame": tf.frame, "label_birth_time": l.birth_time, "label_index": l.birth_index,
         "x": float(p[0]), "y": float(p[1])}
        for tf in sim.truth for l, p in zip(tf.labels, tf.positions)
    ]
    write_csv(os.path.join(args.out, "truth.csv"), TRUTH_COLUMNS, truth_rows)
    det_rows = [
        {"frame": tf.frame, "id": i + 1, "x": float(z[0]), "y": float(z[1])}
        for tf, Z in zip(sim.truth, sim.detections) for i, z in enumerate(Z)
    ]
    write_csv(os.path.join(args.out, "detections.csv"), DETECTION_COLUMNS, det_rows)
    with open(os.path.join(args.out, "simulation.json"), "w") as fh:
        json.dump({"seed": cfg["seed"], "run": args.run, "seeds": vars(seeds),
                   "checksums": sim.checksums, "config": cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.pgm:
        pgm_dir = os.path.join(args.out, "pgm")
        os.makedirs(pgm_dir, exist_ok=True)
        for tf, f in zip(sim.truth, sim.frames):
            write_pgm(os.path.join(pgm_dir, f"frame_{tf.frame:04d}.pgm"), f.pixels)
    print(f"simulated {len(sim.frames)} frames, {len(det_rows)} detections -> {args.out}")
    return 0


def _read_simulation(path):
    try:
        data = np.load(os.path.join(path, "frames.npz"))
        det_rows = read_csv(os.path.join(path, "detections.csv"))
        with open(os.path.join(path, "simulation.json")) as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise CliError("missing_input", f"{exc.filename} not found (run 'simulate' first)") from None
    frames = [int(f) for f in data["frames"]]
    dets = {f: [] for f in frames}
    for r in det_rows:
        dets[int(r["frame"])].append((float(r["x"]), float(r["y"])))
    detections = [np.array(dets[f]).reshape(-1, 2) for f in frames]
    return frames, list(data["pixels"]), detections, meta


def cmd_track(args):
    cfg = _load(args)
    frames, pixels, detections, meta = _read_simulation(args.input)
    filter_seed = meta["seeds"]["filter"] if args.seed is None else run_seeds(cfg["seed"], 1)[0].filter
    estimates, snaps = track_sequence(cfg, args.variant, pixels, detections, filter_seed, snapshots=True)
    os.makedirs(args.out, exist_ok=True)
    rows = [
        {"frame": f, "run": meta["run"], "variant": args.variant,
         "label_birth_time": e.label.birth_time, "label_index": e.label.birth_index,
         "x": float(e.position[0]), "y": float(e.position[1]), "exist_prob": float(e.existence)}
        for f, est in zip(frames, estimates) for e in est
    ]
    write_csv(os.path.join(args.out, "tracks.csv"), TRACK_COLUMNS, rows)
    with open(os.path.join(args.out, "snapshots.jsonl"), "w") as fh:
        for f, snap in zip(frames, snaps):
            snap["frame"] = f
            fh.write(json.dumps(snap, sort_keys=True) + "\n")
    print(f"{args.variant}: {len(rows)} track estimates over {len(frames)} frames -> {args.out}")
    return 0


def _positions_by_frame(rows):
    out = {}
    for r in rows:
        out.setdefault(int(r["frame"]), []).append((float(r["x"]), float(r["y"])))
    return out


def cmd_eval(args):
    cfg = _load(args)
    try:
        est = _positions_by_frame(read_csv(args.tracks))
        truth = _positions_by_frame(read_csv(args.truth))
    except FileNotFoundError as exc:
        raise CliError("missing_input", f"{exc.filename} not found") from None
    except (KeyError, ValueError) as exc:
        raise CliError("bad_csv", f"malformed CSV: {exc}") from None
    params = ospa_params(cfg)
    rows = []
    for f in sorted(set(est) | set(truth)):
        X, Y = est.get(f, []), truth.get(f, [])
        total, loc, card = ospa(X, Y, params)
        rows.append({"frame": f, "ospa": total, "loc": loc, "card": card, "n_est": len(X), "n_true": len(Y)})
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "ospa.csv"), OSPA_COLUMNS, rows)
    means = {k: float(np.mean([r[k] for r in rows])) if rows else 0.0 for k in ("ospa", "loc", "card")}
    print(json.dumps({"frames": len(rows), **{f"mean_{k}": v for k, v in means.items()}}, sort_keys=True))
    return 0


def cmd_mc(args):
    cfg = _load(args)
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("--runs", "must be at least 1")
        cfg["runs"] = args.runs
    if args.workers is not None:
        cfg["workers"] = max(1, args.workers)
    variants = tuple(dict.fromkeys(args.variant)) if args.variant else VARIANTS
    report = run_monte_carlo(cfg, variants)
    write_report(report, args.out)
    agg = report.aggregate
    for v in variants:
        a = agg[v]
        print(f"{v}: mean OSPA {a['mean_ospa']}, hard-frame OSPA {a['hard_mean_ospa']}, "
              f"cardinality within one {a['cardinality_within_one']}, failed runs {a['runs_failed']}")
    print(f"report -> {args.out}")
    return 0


def cmd_oracle_check(args):
    cfg = _load(args)
    results = np.array(run_battery(args.instances, args.trials, cfg["seed"]))
    max_l1 = float(results[:, 0].max()) if len(results) else 0.0
    min_mass = float(results[:, 1].min()) if len(results) else 1.0
    ok = max_l1 <= args.tolerance and min_mass >= 0.99
    print(json.dumps({"instances": args.instances, "trials": args.trials, "max_l1": max_l1,
                      "min_captured_mass": min_mass, "pass": ok}, sort_keys=True))
    return 0 if ok else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "track": cmd_track,
    "eval": cmd_eval,
    "mc": cmd_mc,
    "oracle-check": cmd_oracle_check,
}


def _error_line(code, message, key=None):
    print(json.dumps({"error": code, "key": key, "message": message}, sort_keys=True), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            _error_line("usage", "invalid command line arguments")
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _error_line("config", str(exc), exc.key)
        return 2
    except CliError as exc:
        _error_line(exc.code, str(exc), exc.key)
        return 1
    except OSError as exc:
        _error_line("io", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
