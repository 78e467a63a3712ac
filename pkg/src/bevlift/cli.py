"""Command-line entry point: ``bevlift {lift,detect,eval,synth,bench}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import tensorio
from .bench import KERNELS, parse_size, run_bench, write_bench_csv
from .config import STRATEGIES, load_config
from .evaluation import evaluate, write_pr_svg, write_report
from .exceptions import BevliftError, ConfigError, DataError
from .geometry import load_calibration
from .head import read_boxes_csv, write_boxes_csv
from .pipeline import load_frame, load_frames, load_weights, resolve_weights, run_frames, run_pipeline
from .synth import SceneSpec, derive_state, generate_scene, write_ground_truth, write_scene

log = logging.getLogger("bevlift")


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "strategy", None):
        cfg = cfg.with_strategy(args.strategy)
    return cfg


def _weights(args, cfg):
    if getattr(args, "weights", None):
        return load_weights(args.weights, cfg)
    return resolve_weights(cfg)


def cmd_lift(args):
    cfg = _config(args)
    frame = load_frame(args.frame, cfg)
    out = run_pipeline(cfg, frame, _weights(args, cfg))
    tensorio.save(args.out, out.image_bev)
    if args.mask:
        tensorio.save(args.mask, out.mask.astype("f4"))
    log.info("wrote %s (%s)", args.out, "x".join(map(str, out.image_bev.shape)))
    return 0


def cmd_detect(args):
    cfg = _config(args)
    frames = load_frames(args.frames, cfg)
    outs = run_frames(cfg, frames, _weights(args, cfg), jobs=args.jobs)
    dets = [d for o in outs for d in o.detections]
    write_boxes_csv(args.out, dets, cfg.class_names, with_score=True)
    log.info("%d detections over %d frames -> %s", len(dets), len(frames), args.out)
    return 0


def _eval_calib(args, cfg):
    if args.calib:
        return load_calibration(args.calib)
    if args.frames:
        root = Path(args.frames)
        shared = load_calibration(root / "calib.txt") if (root / "calib.txt").exists() else None
        table = {}
        for p in sorted(root.iterdir()):
            if (p / "calib.txt").exists():
                table[p.name] = load_calibration(p / "calib.txt")
        if shared is not None and not table:
            return shared
        return lambda frame: table.get(frame, shared) or _missing(frame)
    return cfg.camera


def _missing(frame):
    raise DataError(f"no calibration for frame {frame!r}")


def cmd_eval(args):
    cfg = _config(args)
    dets = read_boxes_csv(args.dets, cfg.class_names)
    gts = read_boxes_csv(args.gt, cfg.class_names)
    regions = cfg.regions([r.strip() for r in args.regions.split(",") if r.strip()])
    report = evaluate(dets, gts, cfg.match_config, regions, cfg.class_names, _eval_calib(args, cfg))
    write_report(args.out, report, cfg.class_names)
    if args.pr_svg:
        out_dir = Path(args.pr_svg)
        out_dir.mkdir(parents=True, exist_ok=True)
        for region, row in report.items():
            for name in cfg.class_names:
                write_pr_svg(out_dir / f"pr_{region}_{name}.svg", row[name], f"{name} / {region}")
    for region, row in report.items():
        print(f"{region}: mAP={row['mAP']:.4f}")
    return 0


def cmd_synth(args):
    cfg = load_config(args.preset)
    if cfg.camera is None or not cfg.synth:
        raise ConfigError(f"preset {args.preset!r} lacks camera.* or synth.* keys")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gts = []
    for i in range(args.frames):
        frame_id = f"{i:06d}"
        spec = SceneSpec(
            seed=derive_state(args.seed, i), counts=cfg.synth["counts"], calib=cfg.camera, spec=cfg.bev_spec,
            class_names=cfg.class_names, noise_sigma=cfg.synth["noise_sigma"],
            clutter_rate=cfg.synth["clutter_rate"], surface_density=cfg.synth["surface_density"],
            ground_z=cfg.synth["ground_z"])
        scene = generate_scene(spec)
        write_scene(out / frame_id, scene, cfg.camera, cfg.radar_layout)
        gts.extend(replace(b, frame=frame_id) for b in scene.boxes)
    write_ground_truth(out / "gt.csv", gts, cfg.class_names)
    (out / "config.cfg").write_text(f"preset = {args.preset}\n")
    tensorio.save_archive(out / "weights.lxta", resolve_weights(cfg).to_tensors())
    log.info("wrote %d frames to %s", args.frames, out)
    return 0


def cmd_bench(args):
    cfg = load_config(args.config)
    kernels = [k.strip() for k in args.kernels.split(",") if k.strip()]
    sizes = [parse_size(s) for s in args.sizes.split(",") if s.strip()]
    rows = run_bench(cfg, kernels, sizes, args.repeats)
    write_bench_csv(args.out, rows)
    for r in rows:
        print(f"{r['kernel']:>10} {r['grid']:>12} {r['voxels_per_second']:>14} voxels/s")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="bevlift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lift", help="lift one frame to image BEV features")
    p.add_argument("--config", required=True, help="config file or preset name (vod, tj4d)")
    p.add_argument("--frame", required=True, help="frame directory")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--weights", help="LXTA weight archive (default: config or seeded)")
    p.add_argument("--out", required=True, help="output LXT tensor (X x Y x C)")
    p.add_argument("--mask", help="also write the X x Y x Z coverage / hit mask")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("detect", help="run detection on every frame directory")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", required=True, help="directory of frame directories")
    p.add_argument("--weights")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--jobs", type=int, default=1, help="worker threads (output is order-stable)")
    p.add_argument("--out", required=True, help="detections CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="AP report of detections against ground truth")
    p.add_argument("--dets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--regions", default="eaa,roi,bands", help="comma list of eaa, roi, bands, tag:<name>")
    p.add_argument("--calib", help="calibration used by the corridor region")
    p.add_argument("--frames", help="frame root holding per-frame calib.txt files")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--pr-svg", help="directory for per-class precision-recall SVGs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write deterministic synthetic frames")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--preset", default="vod", choices=("vod", "tj4d"))
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time the lifting kernels")
    p.add_argument("--config", default="vod")
    p.add_argument("--kernels", default=",".join(KERNELS))
    p.add_argument("--sizes", default="160x160x10", help="comma list of XxYxZ grids")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BevliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
