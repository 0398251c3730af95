"""Command-line entry point: one subcommand per stage plus end-to-end runs.

Exit codes: 0 on success, 2 on usage errors (bad flags, unknown config
keys), 1 on processing errors (unreadable files, dimension mismatches,
stage failures).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, tps
from .geodesic import geodesic_stage
from .grabcut import grabcut_volume, parse_scribble_file
from .phantom import PhantomSpec, generate_phantom
from .pipeline import PipelineConfig, run_pipeline
from .preprocess import run_preprocess
from .tracker import TrackerConfig, parse_seed_file, run_tracking, track_report
from .volume import (
    LabelVolume,
    Volume,
    label_overlay,
    load_labels,
    load_volume,
    mvol_kind,
    save_labels,
    save_png,
    save_volume,
    window_to_image,
)


class UsageError(Exception):
    """Bad invocation that argparse cannot catch itself (exit code 2)."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# config key -> (stage attribute on PipelineConfig, field name, parser)
_CONFIG_KEYS = {
    "gmm_k": ("grabcut", "gmm_k", int),
    "lambda": ("grabcut", "lam", float),
    "n_g": ("grabcut", "n_g", int),
    "stride": ("grabcut", "stride", int),
    "iters": ("grabcut", "iters", int),
    "soft_wrap": ("grabcut", "soft_wrap", _bool),
    "seed": ("grabcut", "seed", int),
    "energy_tol": ("grabcut", "energy_tol", float),
    "sample_cap": ("grabcut", "sample_cap", int),
    "tlink_max": ("grabcut", "tlink_max", float),
    "m": ("geodesic", "m", int),
    "eps": ("tracker", "eps", float),
    "window": ("tracker", "window", int),
    "min_segment_px": ("tracker", "min_segment_px", int),
    "auto_init": ("tracker", "auto_init", _bool),
    "auto_init_px": ("tracker", "auto_init_px", int),
    "metal_threshold": ("preprocess", "metal_threshold", float),
    "match_threshold": ("preprocess", "match_threshold", float),
}


def _config_pairs(entries) -> list[tuple[str, str]]:
    """Each --config entry is either key=value or a file of such lines."""
    pairs = []
    for entry in entries or ():
        if "=" in entry:
            key, _, value = entry.partition("=")
            pairs.append((key.strip(), value.strip()))
            continue
        path = Path(entry)
        if not path.is_file():
            raise UsageError(f"--config {entry!r} is neither key=value nor a file")
        for ln, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key=value")
            key, _, value = line.partition("=")
            pairs.append((key.strip(), value.strip()))
    return pairs


def build_pipeline_config(entries, seed=None, track=True) -> PipelineConfig:
    cfg = PipelineConfig(track=track)
    stages = {name: getattr(cfg, name)
              for name in ("preprocess", "geodesic", "grabcut", "tracker")}
    for key, value in _config_pairs(entries):
        if key not in _CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r} "
                             f"(known: {', '.join(sorted(_CONFIG_KEYS))})")
        stage, fname, parse = _CONFIG_KEYS[key]
        try:
            parsed = parse(value)
        except (ValueError, TypeError):
            raise UsageError(f"config {key}: cannot parse {value!r}") from None
        stages[stage] = dataclasses.replace(stages[stage], **{fname: parsed})
    if seed is not None:
        stages["grabcut"] = dataclasses.replace(stages["grabcut"], seed=seed)
    return PipelineConfig(preprocess=stages["preprocess"],
                          geodesic=stages["geodesic"],
                          grabcut=stages["grabcut"],
                          tracker=stages["tracker"],
                          track=track)


def _parse_window(text: str) -> tuple[float, float]:
    try:
        c, w = (float(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"--window expects center,width, got {text!r}") from None
    if w <= 0:
        raise UsageError("window width must be positive")
    return c, w


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> int:
    overrides = {"rng_seed": args.seed,
                 "distractor_blob_count": args.distractors}
    if args.small:
        overrides.update(dims=(64, 64, 40), body_margin_frames=4, cap_frames=2,
                         bandage_thickness=(3, 4), metal_disc_radius=2)
    vol, gt = generate_phantom(PhantomSpec(**overrides))
    save_volume(vol, args.out)
    if args.gt:
        save_labels(gt, args.gt)
    return 0


def cmd_preprocess(args) -> int:
    cfg = build_pipeline_config(args.config)
    result = run_preprocess(load_volume(args.infile), cfg.preprocess)
    save_labels(result.labels, args.out)
    print(f"air threshold: {result.air_threshold:.1f} HU")
    return 0


def cmd_geodesic(args) -> int:
    cfg = build_pipeline_config(args.config)
    out = geodesic_stage(load_volume(args.infile), load_labels(args.labels),
                         cfg.geodesic)
    save_labels(out, args.out)
    return 0


def cmd_grabcut(args) -> int:
    cfg = build_pipeline_config(args.config, seed=args.seed)
    scribbles = parse_scribble_file(args.scribbles) if args.scribbles else None
    result = grabcut_volume(load_volume(args.infile), load_labels(args.labels),
                            scribbles, cfg.grabcut)
    save_labels(result.labels, args.out)
    return 0


def cmd_track(args) -> int:
    cfg = build_pipeline_config(args.config)
    tcfg = cfg.tracker
    if args.auto_init:
        tcfg = dataclasses.replace(tcfg, auto_init=True)
    seeds = parse_seed_file(args.seeds) if args.seeds else ()
    result = run_tracking(load_labels(args.infile), seeds, tcfg)
    save_labels(result.labels, args.out)
    if args.report:
        Path(args.report).write_text(track_report(result.tracks) + "\n",
                                     encoding="utf-8")
    return 0


def cmd_pipeline(args) -> int:
    cfg = build_pipeline_config(args.config, seed=args.seed,
                                track=not args.no_track)
    volume = load_volume(args.infile)
    scribbles = parse_scribble_file(args.scribbles) if args.scribbles else None
    seeds = parse_seed_file(args.seeds) if args.seeds else ()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_pipeline(volume, scribbles, seeds, cfg)
    save_labels(result.preprocess, out_dir / "preprocess.mvol")
    save_labels(result.geodesic, out_dir / "geodesic.mvol")
    save_labels(result.grabcut, out_dir / "grabcut.mvol")
    save_labels(result.labels, out_dir / "labels.mvol")
    (out_dir / "tracks.txt").write_text(track_report(result.tracks) + "\n",
                                        encoding="utf-8")
    if args.gt:
        gt = load_labels(args.gt)
        report = evaluation.evaluate(result.labels, gt, variant=args.variant)
        evaluation.save_report(report, out_dir / "report.csv",
                               out_dir / "iou.png")
        print(f"overall IOU: {report.overall:.4f}")
    return 0


def cmd_warp(args) -> int:
    volume = load_volume(args.infile)
    gt = load_labels(args.gt) if args.gt else None
    points, targets = tps.parse_control_points(args.points)
    if args.set == "single":
        warp = tps.fit_tps(points, targets)
    else:
        n = volume.dims[2]
        sets = tps.make_warp_sets(points, targets, n, sets=(int(args.set),))
        warp = sets[int(args.set)]
    wv, wl = tps.warp_volume(volume, gt, warp)
    save_volume(wv, args.out)
    if wl is not None:
        if not args.gt_out:
            raise UsageError("--gt given but no --gt-out path")
        save_labels(wl, args.gt_out)
    return 0


def cmd_eval(args) -> int:
    pred = load_labels(args.pred)
    gt = load_labels(args.gt)
    report = evaluation.evaluate(pred, gt, variant=args.variant)
    evaluation.save_report(report, args.csv, args.png)
    print(evaluation.summary_table([report]))
    return 0


def cmd_export(args) -> int:
    kind = mvol_kind(args.infile)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    center, width = _parse_window(args.window)
    overlay = load_labels(args.overlay) if args.overlay else None
    if kind == "hu":
        vol = load_volume(args.infile)
        nz = vol.dims[2]
        for z in range(nz):
            gray = window_to_image(vol.voxels[:, :, z], center, width)
            if overlay is not None:
                image = label_overlay(gray, overlay.labels[:, :, z])
            else:
                image = gray
            save_png(image, out_dir / f"slice_{z:04d}.png")
    else:
        lab = load_labels(args.infile)
        nz = lab.dims[2]
        flat = np.full(lab.dims[:2], 64, dtype=np.uint8)
        for z in range(nz):
            save_png(label_overlay(flat, lab.labels[:, :, z], alpha=0.8),
                     out_dir / f"slice_{z:04d}.png")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(volume_path=args.volume, port=args.port, session_dir=args.dir,
          seed=args.seed)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wrapseg",
        description="Weakly supervised segmentation of wrapped bodies in CT.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("phantom", cmd_phantom, "generate a synthetic test volume")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="also write ground-truth labels here")
    p.add_argument("--small", action="store_true",
                   help="64x64x40 volume for quick runs")
    p.add_argument("--distractors", type=int, default=0,
                   help="number of tissue-like debris blobs")

    p = add("preprocess", cmd_preprocess, "air/support/metal/hollow labeling")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", action="append")

    p = add("geodesic", cmd_geodesic, "initial wrap/body split")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", action="append")

    p = add("grabcut", cmd_grabcut, "chunked graph-cut refinement")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--scribbles")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config", action="append")

    p = add("track", cmd_track, "cross-frame continuity filter")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--seeds")
    p.add_argument("--auto-init", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--config", action="append")

    p = add("pipeline", cmd_pipeline, "run all stages end to end")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--gt")
    p.add_argument("--seeds")
    p.add_argument("--scribbles")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-track", action="store_true",
                   help="skip the continuity filter (ablation)")
    p.add_argument("--variant", default="pipeline")
    p.add_argument("--config", action="append")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="advisory worker cap; stages currently run serially")

    p = add("warp", cmd_warp, "synthesize a deformed volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--gt")
    p.add_argument("--points", required=True, help="x,y,x',y' control points")
    p.add_argument("--set", default="single",
                   choices=["single", "1", "2", "3", "4"])
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out", dest="gt_out")

    p = add("eval", cmd_eval, "score labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv")
    p.add_argument("--png")
    p.add_argument("--variant", default="")

    p = add("serve", cmd_serve, "interactive session service")
    p.add_argument("--volume", required=True)
    p.add_argument("--port", type=int, default=8707)
    p.add_argument("--dir", help="session directory (default <volume>.session)")
    p.add_argument("--seed", type=int, default=0)

    p = add("export", cmd_export, "write slices as PNG files")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--window", default="0,2000", help="center,width in HU")
    p.add_argument("--overlay", help="label volume blended over HU slices")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse already printed usage/help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:        # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
