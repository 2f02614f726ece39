"""Command-line front end: ``lidarinsert <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import pipeline
from .augment import INSERTED_INSTANCE_BASE
from .boxfit import read_stats, write_stats
from .config import load_config
from .errors import LidarInsertError, SchemaViolation
from .kitti_io import (
    Calibration,
    boxes_lidar_to_camera,
    pack_labels,
    read_labeled_scan,
    read_scan,
    read_scene_json,
    write_calib,
    write_detection_labels,
    write_poses,
    write_scan,
    write_scene_json,
)
from .model import DETECTION_NAMES
from .spherical import depth_order_violations
from .synth import SceneSpec, generate_sequence, street_spec


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise SchemaViolation(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def _config(args, extra: dict):
    ov = _overrides(args)
    ov.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, ov)


def cmd_make_maps(args) -> int:
    cfg = _config(args, {"map.accumulate": True if args.accumulate else None, "map.window": args.window,
                         "map.cell_size": args.cell_size})
    ds = pipeline.load_dataset(args.input)
    out = Path(args.output)
    grids = pipeline.make_maps(ds, cfg, out, debug=args.debug_renders)
    cfg.dump(out / "config.yaml")
    for sid, g in grids.items():
        print(f"{sid},road_cells={int(g.road.sum())},pedestrian_cells={int(g.pedestrian.sum())}")
    return 0


def cmd_stats(args) -> int:
    classes = [int(c) for c in args.classes.split(",")] if args.classes else None
    cfg = _config(args, {"stats.classes": classes, "stats.min_samples": args.min_samples})
    ds = pipeline.load_dataset(args.input)
    table = cfg.class_table()
    stats = pipeline.class_stats(ds, cfg, table)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    write_stats(stats, args.output, {c.id: c.name for c in table.classes})
    for cid, s in stats.items():
        print(f"{cid},{table[cid].name},min={s.min_dims},max={s.max_dims}")
    return 0


def cmd_fit_boxes(args) -> int:
    cfg = _config(args, {})
    ds = pipeline.load_dataset(args.input)
    table = cfg.class_table()
    stats = read_stats(args.stats) if args.stats else None
    out = Path(args.output) / "boxes"
    out.mkdir(parents=True, exist_ok=True)
    for scene in ds.scenes:
        rows = []
        for f in pipeline.fit_instance_boxes(scene, table, stats):
            b = f.box
            rows.append({"instance": f.instance, "class_id": f.class_id, "class_name": table[f.class_id].name,
                         "points": f.points, "cx": b.cx, "cy": b.cy, "cz": b.cz, "l": b.l, "w": b.w,
                         "h": b.h, "yaw": b.yaw})
        (out / f"{scene.scene_id}.json").write_text(json.dumps(rows, indent=1) + "\n")
        print(f"{scene.scene_id},boxes={len(rows)}")
    cfg.dump(Path(args.output) / "config.yaml")
    return 0


def cmd_augment(args) -> int:
    cfg = _config(args, {"augment.mode": args.mode, "augment.max_objects_per_scene": args.max_objects,
                         "seed": args.seed, "task": args.task,
                         "augment.global_aug": True if args.global_aug else None})
    ds = pipeline.load_dataset(args.input)
    maps = pipeline.load_maps(args.maps, ds.ids) if args.maps else None
    stats = read_stats(args.stats) if args.stats else None
    outcomes = pipeline.run_augment(ds, cfg, args.output, jobs=args.jobs, maps=maps, stats=stats,
                                    debug=args.debug_renders)
    failed = 0
    for o in outcomes:
        r = o.report
        if o.status != "ok":
            failed += 1
            print(f"{r.scene_id},error,{o.error}", file=sys.stderr)
        else:
            per = ";".join(f"{k}={v}" for k, v in sorted(r.inserted.items()))
            print(f"{r.scene_id},{r.mode},inserted={r.total_inserted},{per}")
    return 1 if failed else 0


def _load_spec(args) -> SceneSpec:
    if args.preset == "street":
        return street_spec(seed=args.seed or 0, frames=args.frames or 1)
    if not args.spec:
        raise SchemaViolation("synth needs a spec file or --preset")
    try:
        data = yaml.safe_load(Path(args.spec).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise SchemaViolation(f"cannot read scene spec {args.spec}: {exc}") from exc
    spec = SceneSpec.from_dict(data)
    if args.seed is not None:
        spec.seed = args.seed
    if args.frames is not None:
        spec.frames = args.frames
    return spec


def cmd_synth(args) -> int:
    spec = _load_spec(args)
    frames = generate_sequence(spec)
    out = Path(args.output)
    poses = [f.pose for f in frames]
    if args.format == "native":
        (out / "scenes").mkdir(parents=True, exist_ok=True)
        for f in frames:
            write_scene_json(f.scene, out / "scenes" / f"{f.scene.scene_id}.json")
    else:
        for sub in ("velodyne", "labels", "label_2"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        calib = Calibration.identity()
        write_calib(calib, out / "calib.txt")
        for f in frames:
            s = f.scene.scan
            sid = s.frame_id
            write_scan(s, out / "velodyne" / f"{sid}.bin")
            (out / "labels" / f"{sid}.label").write_bytes(pack_labels(s.labels, s.instances).tobytes())
            keep = [i for i, c in enumerate(f.gt_classes) if c in DETECTION_NAMES]
            labels = boxes_lidar_to_camera([f.gt_boxes[i] for i in keep], calib,
                                           [DETECTION_NAMES[f.gt_classes[i]] for i in keep])
            write_detection_labels(labels, out / "label_2" / f"{sid}.txt")
    write_poses(poses, out / "poses.txt")
    for f in frames:
        print(f"{f.scene.scene_id},points={len(f.scene.scan)},boxes={len(f.gt_boxes)}")
    return 0


def cmd_check(args) -> int:
    path = Path(args.scan)
    if path.suffix == ".json":
        scan = read_scene_json(path).scan
    elif args.labels:
        scan = read_labeled_scan(path, args.labels)
    else:
        scan = read_scan(path)
    cfg = _config(args, {})
    if scan.instances is None:
        inserted = np.zeros(len(scan), bool)
    else:
        inserted = scan.instances >= args.inserted_base
    rep = depth_order_violations(scan, inserted, params=cfg.spherical_params())
    print(f"{scan.frame_id or path.stem},inserted_points={int(inserted.sum())},violations={rep.count}")
    for row, col, kind in rep.pixels[: args.show]:
        print(f"{row},{col},{kind}")
    return 1 if rep.count else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config (default: $LIDARINSERT_CONFIG)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. augment.max_attempts_per_object=20")

    p = argparse.ArgumentParser(prog="lidarinsert", description="Map-guided object insertion for lidar scans.")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("make-maps", parents=[common], help="build placement maps")
    m.add_argument("input")
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--accumulate", action="store_true", help="merge neighbouring scans using poses")
    m.add_argument("--window", type=int, help="frames on each side when accumulating")
    m.add_argument("--cell-size", type=float)
    m.add_argument("--debug-renders", action="store_true")
    m.set_defaults(func=cmd_make_maps)

    s = sub.add_parser("stats", parents=[common], help="per-class box dimension bounds")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True, help="stats text file")
    s.add_argument("--classes", help="comma separated class ids")
    s.add_argument("--min-samples", type=int)
    s.set_defaults(func=cmd_stats)

    f = sub.add_parser("fit-boxes", parents=[common], help="fit boxes to labeled instances")
    f.add_argument("input")
    f.add_argument("-o", "--output", required=True)
    f.add_argument("--stats", help="stats file for dimension refinement")
    f.set_defaults(func=cmd_fit_boxes)

    a = sub.add_parser("augment", parents=[common], help="insert bank objects into every scene")
    a.add_argument("input")
    a.add_argument("-o", "--output", required=True)
    a.add_argument("--mode", choices=["real3d", "naive"])
    a.add_argument("--task", choices=["segmentation", "detection"])
    a.add_argument("--max-objects", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--maps", help="directory of precomputed maps (built on the fly otherwise)")
    a.add_argument("--stats", help="stats file for box refinement")
    a.add_argument("--global-aug", action="store_true", help="random flip, rotation and scaling afterwards")
    a.add_argument("--debug-renders", action="store_true")
    a.set_defaults(func=cmd_augment)

    y = sub.add_parser("synth", parents=[common], help="generate synthetic labeled scans")
    y.add_argument("spec", nargs="?", help="YAML/JSON scene spec")
    y.add_argument("-o", "--output", required=True)
    y.add_argument("--preset", choices=["street"])
    y.add_argument("--frames", type=int)
    y.add_argument("--seed", type=int)
    y.add_argument("--format", choices=["native", "kitti"], default="native")
    y.set_defaults(func=cmd_synth)

    c = sub.add_parser("check", parents=[common], help="depth-order violation check")
    c.add_argument("scan", help=".bin scan or native .json scene")
    c.add_argument("labels", nargs="?", help=".label file for a .bin scan")
    c.add_argument("--inserted-base", type=int, default=INSERTED_INSTANCE_BASE,
                   help="instance ids at or above this mark inserted points")
    c.add_argument("--show", type=int, default=20, help="violating pixels to list")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LidarInsertError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
