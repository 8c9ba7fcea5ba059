"""Command line entry point: ``roifusion <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import os
import sys
import time

import numpy as np

from .config import RunConfig
from .data import (KittiDataset, SyntheticConfig, gen_synthetic_scene, make_synthetic_dataset,
                   read_scene, write_scene)
from .evaluation import evaluate, frame_ground_truth, read_detections, write_detections
from .exceptions import ConfigError, DataError
from .fusionkp import foreground_mask
from .geom import OrientedBox3D, iou_3d, project_points
from .model import RoIFusionDetector, RoIFusionNet
from .sampling import FarthestPointSampler
from .viz import write_bev_svg, write_ply

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
ETA_GRID = (0.0, 0.5, 1.0, 1.5, 2.0)
FUSION_GRID = ("sum", "concat", "max")
VAL_SEED_OFFSET = 1_000_000


# -- config and data helpers -----------------------------------------------------------


def resolve_config(args, toy_default=False):
    base = None
    if getattr(args, "checkpoint", None) and os.path.exists(args.checkpoint + ".ini"):
        base = RunConfig.load(args.checkpoint + ".ini")
    if base is None:
        dataset = args.dataset or "synthetic"
        base = RunConfig.toy() if (toy_default or dataset == "synthetic") else RunConfig()
    cfg = RunConfig.load(args.config, base) if args.config else base
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.dataset is not None:
        kw["dataset"] = args.dataset
    if getattr(args, "data", None):
        kw["data_path"] = args.data
    if args.out:
        kw["out"] = args.out
    return cfg.with_overrides(**kw) if kw else cfg


def synthetic_config(cfg):
    return SyntheticConfig(n_points=cfg.scene_points, min_objects=cfg.min_objects, max_objects=cfg.max_objects)


def train_frames(cfg):
    if cfg.dataset == "synthetic":
        if cfg.data_path:
            return _scene_dir(cfg.data_path)
        return make_synthetic_dataset(cfg.n_train, cfg.seed, synthetic_config(cfg))
    return list(_kitti(cfg, cfg.split))


def val_frames(cfg):
    if cfg.dataset == "synthetic":
        if cfg.data_path:
            return _scene_dir(cfg.data_path)
        return make_synthetic_dataset(cfg.n_val, cfg.seed + VAL_SEED_OFFSET, synthetic_config(cfg))
    return list(_kitti(cfg, cfg.split))


def _kitti(cfg, split):
    if not cfg.data_path:
        raise DataError("the kitti dataset needs a data path (--data or [data] data_path)")
    return KittiDataset(cfg.data_path, split or None, cfg.seg_dir or None,
                        frustum_filter=cfg.frustum_filter, classes=cfg.classes)


def _scene_dir(path):
    if os.path.isfile(path):
        return [read_scene(path)]
    if not os.path.isdir(path):
        raise DataError(f"no such scene archive or directory: {path}")
    names = sorted(n for n in os.listdir(path) if n.endswith(".rfsc"))
    if not names:
        raise DataError(f"{path}: no .rfsc scene archives")
    return [read_scene(os.path.join(path, n)) for n in names]


def load_scene(args, cfg):
    """One frame: ``--scene`` archive, the first KITTI frame, or a synthetic scene."""
    if getattr(args, "scene", None):
        return read_scene(args.scene)
    if cfg.dataset == "kitti":
        frames = _kitti(cfg, cfg.split)
        if not len(frames):
            raise DataError("empty KITTI split")
        return frames.load(frames.frame_ids[0])
    return gen_synthetic_scene(synthetic_config(cfg), cfg.seed)


def _out_dir(path):
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _emit(text, out_dir, name):
    sys.stdout.write(text)
    if out_dir:
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text)


# -- commands ------------------------------------------------------------------------------


def cmd_sample(args):
    cfg = resolve_config(args)
    scene = load_scene(args, cfg)
    count = args.count or cfg.m1
    sampler = FarthestPointSampler(count, strategy=args.strategy, geo_weight=cfg.geo_weight)
    X = scene.cloud.points
    sampler.fit(X)
    lines = [f"strategy={args.strategy}", f"count={len(sampler.indices_)}"]
    lines += [f"{i} {X[i, 0]:.6f} {X[i, 1]:.6f} {X[i, 2]:.6f}" for i in sampler.indices_]
    _emit("\n".join(lines) + "\n", _out_dir(args.out), "samples.txt")
    return EXIT_OK


def cmd_project(args):
    cfg = resolve_config(args)
    scene = load_scene(args, cfg)
    proj = project_points(scene.cloud, scene.calib)
    mask, _ = foreground_mask(scene.cloud, scene.calib, scene.seg, cfg.tau_fg)
    lines = [f"points={len(proj.depth)}", f"in_image={int(proj.in_image.sum())}",
             f"foreground={int(mask.sum())}"]
    if args.verbose:
        lines += [f"{u:.3f} {v:.3f} {d:.3f} {int(ok)} {int(m)}"
                  for (u, v), d, ok, m in zip(proj.uv, proj.depth, proj.in_image, mask)]
    _emit("\n".join(lines) + "\n", _out_dir(args.out), "projection.txt")
    return EXIT_OK


def _format_record(rec):
    keys = ["epoch", "total", "cls", "ctr", "size", "bin", "res", "vote"]
    return " ".join(f"{k}={rec[k]}" if k == "epoch" else f"{k}={rec[k]:.6f}" for k in keys if k in rec)


def train(cfg, frames, log=None, verbose=False):
    det = RoIFusionDetector(cfg, verbose=0)

    def on_epoch(rec):
        line = _format_record(rec)
        if log is not None:
            log.write(line + "\n")
            log.flush()
        if verbose:
            print(line, flush=True)

    det.fit(frames, callback=on_epoch)
    return det


def cmd_train_toy(args):
    cfg = resolve_config(args, toy_default=True)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    if args.scenes is not None:
        cfg = cfg.with_overrides(n_train=args.scenes)
    out = _out_dir(args.out or cfg.out or ".")
    frames = train_frames(cfg)
    with open(os.path.join(out, "train_log.txt"), "w") as log:
        det = train(cfg, frames, log, verbose=True)
    ckpt = args.checkpoint or os.path.join(out, "model.rfn")
    det.save(ckpt)
    cfg.save(ckpt + ".ini")
    print(f"checkpoint={ckpt}")
    return EXIT_OK


def _detections_from_dir(directory, frames):
    dets = []
    for f in frames:
        path = os.path.join(directory, f"{f.frame_id}.txt")
        if os.path.exists(path):
            dets += read_detections(path, f.calib, f.frame_id)
    return dets


def run_eval(cfg, frames, dets):
    gts = [g for f in frames for g in frame_ground_truth(f)]
    return evaluate(dets, gts, cfg.classes, cfg.iou_thresholds, cfg.interpolation)


def cmd_eval(args):
    cfg = resolve_config(args)
    if args.interpolation:
        cfg = cfg.with_overrides(interpolation=args.interpolation)
    frames = val_frames(cfg)
    if args.detections:
        dets = _detections_from_dir(args.detections, frames)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --detections")
        det = RoIFusionDetector(cfg).load(args.checkpoint)
        per_frame = det.predict(frames)
        dets = [d for ds in per_frame for d in ds]
        if args.out and args.write_detections:
            ddir = _out_dir(os.path.join(args.out, "detections"))
            for f, ds in zip(frames, per_frame):
                write_detections(os.path.join(ddir, f"{f.frame_id}.txt"), ds, f.calib)
    report = run_eval(cfg, frames, dets)
    out = _out_dir(args.out)
    sys.stdout.write(report.to_table())
    if out:
        with open(os.path.join(out, "report.txt"), "w") as fh:
            fh.write(report.to_kv())
        with open(os.path.join(out, "report_table.txt"), "w") as fh:
            fh.write(report.to_table())
    else:
        sys.stdout.write(report.to_kv())
    return EXIT_OK


def ablation_rows(cfg, axis, values, train_set, val_set):
    """Train and evaluate once per axis value; returns ``[(value, report), ...]``."""
    rows = []
    for v in values:
        run_cfg = cfg.with_overrides(**{axis: v})
        det = train(run_cfg, train_set)
        dets = [d for ds in det.predict(val_set) for d in ds]
        rows.append((v, run_eval(run_cfg, val_set, dets)))
    return rows


def format_ablation(axis, rows, cls="Car"):
    lines = [f"{axis:>8} {'easy':>8} {'moderate':>9} {'hard':>8}"]
    for v, rep in rows:
        aps = [100 * rep.ap.get((cls, lvl), 0.0) for lvl in ("easy", "moderate", "hard")]
        label = f"{v:g}" if isinstance(v, float) else str(v)
        lines.append(f"{label:>8} {aps[0]:8.2f} {aps[1]:9.2f} {aps[2]:8.2f}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    cfg = resolve_config(args, toy_default=True)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    if args.axis == "eta":
        values = tuple(float(v) for v in args.values.split(",")) if args.values else ETA_GRID
    else:
        values = tuple(args.values.split(",")) if args.values else FUSION_GRID
    axis = "eta" if args.axis == "eta" else "fusion"
    if axis == "fusion" and cfg.pool_mlp[-1] != cfg.image_out:
        raise ConfigError("fusion ablation needs pool_mlp[-1] == image_out")
    rows = ablation_rows(cfg, axis, values, train_frames(cfg), val_frames(cfg))
    _emit(format_ablation(axis, rows, cfg.classes[0]), _out_dir(args.out), f"ablate_{axis}.txt")
    return EXIT_OK


def cmd_export_viz(args):
    cfg = resolve_config(args)
    scene = load_scene(args, cfg)
    out = _out_dir(args.out or ".")
    dets = []
    if args.detections:
        dets = read_detections(args.detections, scene.calib, scene.frame_id)
    elif args.checkpoint:
        dets = RoIFusionDetector(cfg).load(args.checkpoint).predict([scene])[0]
    mask, _ = foreground_mask(scene.cloud, scene.calib, scene.seg, cfg.tau_fg)
    write_ply(os.path.join(out, f"{scene.frame_id}.ply"), scene.cloud.xyz, mask)
    write_bev_svg(os.path.join(out, f"{scene.frame_id}.svg"),
                  [b.to_array() for b in scene.gt_boxes], [d.box.to_array() for d in dets],
                  scene.cloud.xyz if args.points else None)
    if args.save_scene:
        write_scene(os.path.join(out, f"{scene.frame_id}.rfsc"), scene)
    print(f"ply={os.path.join(out, scene.frame_id + '.ply')}")
    print(f"svg={os.path.join(out, scene.frame_id + '.svg')}")
    return EXIT_OK


def cmd_bench(args):
    cfg = resolve_config(args, toy_default=True)
    rng = np.random.default_rng(cfg.seed)
    lines = []
    pts = rng.normal(size=(cfg.n_points, 3)) * 10

    t = time.perf_counter()
    FarthestPointSampler(cfg.m1).fit(pts)
    lines.append(f"fps_seconds={time.perf_counter() - t:.4f}")

    boxes = [OrientedBox3D(tuple(rng.normal(size=3)), tuple(rng.uniform(1, 4, 3)), rng.uniform(-3, 3))
             for _ in range(200)]
    t = time.perf_counter()
    for a, b in zip(boxes[::2], boxes[1::2]):
        iou_3d(a, b)
    lines.append(f"iou_pairs_per_second={100 / (time.perf_counter() - t):.1f}")

    scene = load_scene(args, cfg)
    net = RoIFusionNet(cfg)
    prep = net.prepare(scene)
    t = time.perf_counter()
    n_steps = args.steps
    for _ in range(n_steps):
        net.train_step(prep, rng)
    lines.append(f"train_step_seconds={(time.perf_counter() - t) / n_steps:.4f}")
    t = time.perf_counter()
    net.detect(prep)
    lines.append(f"detect_seconds={time.perf_counter() - t:.4f}")
    _emit("\n".join(lines) + "\n", _out_dir(args.out), "bench.txt")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--dataset", choices=("kitti", "synthetic"))
    common.add_argument("--checkpoint", help="parameter checkpoint (RFN1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="KITTI root or directory of .rfsc scene archives")

    parser = argparse.ArgumentParser(prog="roifusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common], help="farthest point sampling on one scene")
    p.add_argument("--scene", help="scene archive (.rfsc)")
    p.add_argument("--count", type=int)
    p.add_argument("--strategy", choices=("d-fps", "f-fps", "fused"), default="d-fps")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("project", parents=[common], help="project a scene into the image")
    p.add_argument("--scene")
    p.add_argument("--verbose", action="store_true", help="list every point")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train-toy", parents=[common], help="train on synthetic scenes")
    p.add_argument("--epochs", type=int)
    p.add_argument("--scenes", type=int, help="number of training scenes")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or detection files")
    p.add_argument("--detections", help="directory of KITTI result files (<frame>.txt)")
    p.add_argument("--interpolation", choices=("R11", "R40"))
    p.add_argument("--write-detections", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train/evaluate over eta or fusion settings")
    p.add_argument("--axis", choices=("eta", "fusion"), required=True)
    p.add_argument("--values", help="comma-separated override of the axis grid")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-viz", parents=[common], help="write PLY + SVG for one scene")
    p.add_argument("--scene")
    p.add_argument("--detections", help="KITTI result file for the scene")
    p.add_argument("--points", action="store_true", help="draw points in the SVG")
    p.add_argument("--save-scene", action="store_true", help="also write the scene archive")
    p.set_defaults(func=cmd_export_viz)

    p = sub.add_parser("bench", parents=[common], help="time the core kernels")
    p.add_argument("--scene")
    p.add_argument("--steps", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
