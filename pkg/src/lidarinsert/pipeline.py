"""Dataset-level orchestration: loading, maps, box fitting, bank building and augmentation runs.

Two on-disk layouts are understood:

* native: ``scenes/*.json`` (one scene per file) plus an optional ``poses.txt``
* kitti: ``velodyne/*.bin`` with optional ``labels/*.label``, ``label_2/*.txt``,
  ``calib.txt`` and ``poses.txt``

Outputs mirror the input layout.
"""
from __future__ import annotations

import csv
import multiprocessing
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import render
from .augment import (
    AugmentConfig,
    SceneReport,
    Task,
    augment_scene,
    extract_object,
    global_augment,
    naive_gt_aug,
)
from .bevmap import BevGrid, accumulate, build_map, rasterize, to_pgm
from .boxfit import compute_class_stats, fit_box, refine_box
from .config import RunConfig
from .errors import InsufficientData, LengthMismatch, LidarInsertError, MalformedFile, TooFewPoints
from .kitti_io import (
    Calibration,
    Scene,
    atomic_write_bytes,
    boxes_camera_to_lidar,
    boxes_lidar_to_camera,
    pack_labels,
    read_calib,
    read_detection_labels,
    read_labels,
    read_poses,
    read_scan,
    read_scene_json,
    scene_to_json,
    velodyne_poses,
    write_calib,
    write_detection_labels,
    write_poses,
)
from .model import DETECTION_NAME_TO_ID, DETECTION_NAMES, ClassTable, InsertableObject, LidarScan, OrientedBox, Pose
from .spherical import closed_projection, depth_to_pgm


@dataclass
class Dataset:
    root: Path
    layout: str  # native | kitti
    scenes: list
    poses: Optional[list] = None
    calib: Optional[Calibration] = None

    @property
    def ids(self) -> list:
        return [s.scene_id for s in self.scenes]


@dataclass
class FittedBox:
    scene_id: str
    instance: int
    class_id: int
    box: OrientedBox
    points: int


def load_dataset(root) -> Dataset:
    """Read every scene under ``root`` (layout detected from the directory contents).

    Raises:
        MalformedFile: if neither layout is present or a file is broken.
    """
    root = Path(root)
    poses = read_poses(root / "poses.txt") if (root / "poses.txt").exists() else None
    if (root / "scenes").is_dir():
        scenes = [read_scene_json(p) for p in sorted((root / "scenes").glob("*.json"))]
        for p, s in zip(sorted((root / "scenes").glob("*.json")), scenes):
            if not s.scan.frame_id:
                s.scan = LidarScan(s.scan.points, s.scan.labels, s.scan.instances, p.stem)
        ds = Dataset(root, "native", scenes, poses)
    elif (root / "velodyne").is_dir():
        calib = read_calib(root / "calib.txt") if (root / "calib.txt").exists() else None
        scenes = []
        for p in sorted((root / "velodyne").glob("*.bin")):
            scan = read_scan(p, frame_id=p.stem)
            lab_path = root / "labels" / (p.stem + ".label")
            if lab_path.exists():
                labels, inst = read_labels(lab_path, len(scan))
                scan = LidarScan(scan.points, labels, inst, p.stem)
            scene = Scene(scan)
            det_path = root / "label_2" / (p.stem + ".txt")
            if det_path.exists():
                dets = [d for d in read_detection_labels(det_path) if d.name in DETECTION_NAME_TO_ID]
                scene.boxes = boxes_camera_to_lidar(dets, calib)
                scene.box_classes = [DETECTION_NAME_TO_ID[d.name] for d in dets]
                scene.box_difficulty = [d.difficulty for d in dets]
            scenes.append(scene)
        if poses is not None and calib is not None:
            poses = velodyne_poses(poses, Pose.from_matrix(calib.tr_velo_to_cam, atol=1e-4))
        ds = Dataset(root, "kitti", scenes, poses, calib)
    else:
        raise MalformedFile(f"{root}: expected a scenes/ or velodyne/ directory")
    if not ds.scenes:
        raise MalformedFile(f"{root}: no scenes found")
    if ds.poses is not None and len(ds.poses) != len(ds.scenes):
        raise LengthMismatch(f"{root}/poses.txt has {len(ds.poses)} poses for {len(ds.scenes)} scenes")
    return ds


# -- maps ------------------------------------------------------------------------

def scene_map(ds: Dataset, index: int, cfg: RunConfig) -> BevGrid:
    """Placement map of one scene in its own sensor frame.

    With ``cfg.map.accumulate`` the scans within ``cfg.map.window`` frames are
    moved into this scene's frame using the sequence poses first.
    """
    m = cfg.map
    kw = dict(road_class_ids=m.road_class_ids, sidewalk_class_ids=m.sidewalk_class_ids, cell_size=m.cell_size)
    if m.accumulate:
        if ds.poses is None:
            raise LengthMismatch("map accumulation needs poses.txt")
        lo, hi = max(0, index - m.window), min(len(ds.scenes), index + m.window + 1)
        to_local = ds.poses[index].inverse()
        rel = [to_local.compose(ds.poses[j]) for j in range(lo, hi)]
        grid = accumulate([ds.scenes[j].scan for j in range(lo, hi)], rel, **kw)
    else:
        grid = rasterize(ds.scenes[index].scan, **kw)
    return build_map(grid, m.road_seed, m.pedestrian_border, m.pedestrian_seed)


def make_maps(ds: Dataset, cfg: RunConfig, out_dir, debug: bool = False) -> dict:
    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    grids = {}
    for i, scene in enumerate(ds.scenes):
        grid = scene_map(ds, i, cfg)
        grid.save(out / "maps" / f"{scene.scene_id}.npz")
        if debug:
            dbg = out / "debug"
            dbg.mkdir(exist_ok=True)
            to_pgm(grid, dbg / f"{scene.scene_id}_map.pgm")
            render.plot_bev_map(grid, dbg / f"{scene.scene_id}_map.png", scene.boxes,
                                title=f"{scene.scene_id} placement map")
        grids[scene.scene_id] = grid
    return grids


def load_maps(map_dir, ids: Sequence[str]) -> dict:
    """Maps per scene id from ``map_dir`` or its ``maps/`` subdirectory (make-maps output)."""
    root = Path(map_dir)
    if (root / "maps").is_dir():
        root = root / "maps"
    return {i: BevGrid.load(root / f"{i}.npz") for i in ids}


# -- boxes, stats and the object bank ---------------------------------------------

def fit_instance_boxes(scene: Scene, table: ClassTable, stats: Optional[dict] = None,
                       inserted_base: Optional[int] = None) -> list:
    """One fitted (and, with stats, refined) box per labeled instance of a known class."""
    scan = scene.scan
    if scan.labels is None or scan.instances is None:
        return []
    out = []
    keys = np.stack([scan.labels, scan.instances], axis=1)
    sel = np.isin(scan.labels, table.ids) & (scan.instances > 0)
    if inserted_base is not None:
        sel &= scan.instances < inserted_base
    if not sel.any():
        return out
    uniq, inv = np.unique(keys[sel], axis=0, return_inverse=True)
    idx = np.flatnonzero(sel)
    for k, (cls, inst) in enumerate(uniq):
        pts = scan.xyz[idx[inv.ravel() == k]]
        box = fit_box(pts)
        if stats is not None:
            box = refine_box(box, stats.get(int(cls)))
        out.append(FittedBox(scene.scene_id, int(inst), int(cls), box, len(pts)))
    return out


def corpus_dims(ds: Dataset, cfg: RunConfig, table: ClassTable) -> list:
    """(class, l, w, h) for every annotated box, or fitted boxes when a scene has none."""
    rows = []
    for scene in ds.scenes:
        if scene.boxes:
            pairs = list(zip(scene.box_classes, scene.boxes))
        else:
            pairs = [(f.class_id, f.box) for f in fit_instance_boxes(scene, table)]
        rows.extend((c, b.l, b.w, b.h) for c, b in pairs
                    if c in cfg.stats.classes and min(b.l, b.w, b.h) > 0)
    return rows


def class_stats(ds: Dataset, cfg: RunConfig, table: ClassTable) -> dict:
    """Dimension bounds for the configured classes.

    Raises:
        InsufficientData: listing classes with too few boxes (absent ones included).
    """
    rows = corpus_dims(ds, cfg, table)
    counts = Counter(int(r[0]) for r in rows)
    short = sorted(c for c in cfg.stats.classes if counts[c] < cfg.stats.min_samples)
    if short:
        raise InsufficientData("fewer than %d boxes for class(es) %s"
                               % (cfg.stats.min_samples, ", ".join(table[c].name if c in table else str(c)
                                                                   for c in short)), short)
    return compute_class_stats(rows, cfg.stats.min_samples)


def scene_obstacles(scene: Scene, cfg: RunConfig, table: ClassTable, stats: Optional[dict]) -> tuple:
    """Boxes that insertions must avoid and the bank sources of this scene.

    Returns ``(boxes, classes, sources)`` where each source is
    ``(box, class_id, instance_or_None, difficulty)``.
    """
    if cfg.task == "segmentation":
        fitted = fit_instance_boxes(scene, table, stats, cfg.augment_config().inserted_instance_base)
        sources = [(f.box, f.class_id, f.instance, None) for f in fitted]
        return [f.box for f in fitted], [f.class_id for f in fitted], sources
    diff = scene.box_difficulty or [None] * len(scene.boxes)
    sources = [(b, c, None, d) for b, c, d in zip(scene.boxes, scene.box_classes, diff)]
    return list(scene.boxes), list(scene.box_classes), sources


def build_bank(ds: Dataset, cfg: RunConfig, table: ClassTable, stats: Optional[dict] = None) -> list:
    """Extract every insertable object with more points than its class minimum."""
    task = Task(cfg.task)
    acfg = cfg.augment_config()
    bank = []
    for scene in ds.scenes:
        _, _, sources = scene_obstacles(scene, cfg, table, stats)
        for box, cls, inst, diff in sources:
            sc = table.get(cls)
            if sc is None or not sc.insertable or box.is_degenerate or box.bev_range <= 0:
                continue
            try:
                obj = extract_object(scene.scan, box, sc, task, inst, scene.scene_id, diff,
                                     acfg.road_class_ids, acfg.sidewalk_class_ids)
            except TooFewPoints:
                continue
            if len(obj.points) > sc.min_insert_points:
                bank.append(obj)
    return bank


# -- augmentation -------------------------------------------------------------------

def scene_rng(seed: int, scene_id: str) -> np.random.Generator:
    """Per-scene generator, independent of processing order and worker count."""
    return np.random.default_rng([int(seed), zlib.crc32(scene_id.encode())])


@dataclass
class SceneOutcome:
    report: SceneReport
    status: str = "ok"
    error: str = ""
    bank_classes: dict = field(default_factory=dict)


_WORK: dict = {}


def _augment_one(index: int) -> SceneOutcome:
    w = _WORK
    ds, cfg, table = w["ds"], w["cfg"], w["table"]
    scene = ds.scenes[index]
    sid = scene.scene_id
    try:
        acfg: AugmentConfig = cfg.augment_config()
        rng = scene_rng(cfg.seed, sid)
        boxes, classes, _ = scene_obstacles(scene, cfg, table, w["stats"])
        if cfg.augment.mode == "naive":
            res = naive_gt_aug(scene.scan, boxes, w["bank"], acfg, rng, classes)
        else:
            grid = w["maps"].get(sid) if w["maps"] is not None else None
            if grid is None:
                grid = scene_map(ds, index, cfg)
            res = augment_scene(scene.scan, boxes, w["bank"], grid, acfg, rng, classes)
        new_boxes = [r.box for r in res.report.insertions]
        out_boxes = list(scene.boxes) + new_boxes
        out_classes = list(scene.box_classes) + [r.class_id for r in res.report.insertions]
        out_diff = list(scene.box_difficulty)
        if out_diff and new_boxes:
            out_diff += ["easy"] * len(new_boxes)
        scan = res.scan
        if cfg.augment.global_aug:
            scan, out_boxes, _ = global_augment(scan, out_boxes, acfg.global_aug, rng)
        out = Scene(scan, out_boxes, out_classes, out_diff, scene.map_params)
        write_scene(out, ds, w["out"], cfg)
        if w["debug"]:
            dbg = w["out"] / "debug"
            render.plot_augmented_scene(scan, dbg / f"{sid}_augmented.png", res.inserted_mask,
                                        out_boxes[:len(scene.boxes)], out_boxes[len(scene.boxes):],
                                        title=f"{sid}: {res.report.total_inserted} inserted")
            img = closed_projection(scan, acfg.spherical)
            depth_to_pgm(img, dbg / f"{sid}_range.pgm")
            render.plot_range_image(img, dbg / f"{sid}_range.png", title=f"{sid} range image")
        return SceneOutcome(res.report)
    except LidarInsertError as exc:
        return SceneOutcome(SceneReport(sid, cfg.augment.mode), "error", f"{type(exc).__name__}: {exc}")


def write_scene(scene: Scene, ds: Dataset, out: Path, cfg: RunConfig) -> None:
    sid = scene.scene_id
    if ds.layout == "native":
        atomic_write_bytes(out / "scenes" / f"{sid}.json", scene_to_json(scene).encode())
        return
    pts = scene.scan.points.astype("<f4")
    atomic_write_bytes(out / "velodyne" / f"{sid}.bin", pts.tobytes())
    if scene.scan.labels is not None:
        inst = scene.scan.instances if scene.scan.instances is not None else np.zeros(len(scene.scan), int)
        atomic_write_bytes(out / "labels" / f"{sid}.label", pack_labels(scene.scan.labels, inst).tobytes())
    if scene.boxes and ds.calib is not None:
        names = [DETECTION_NAMES.get(c, "DontCare") for c in scene.box_classes]
        occl = [0 if d in (None, "easy") else 1 for d in (scene.box_difficulty or [None] * len(scene.boxes))]
        labels = boxes_lidar_to_camera(scene.boxes, ds.calib, names, occl)
        write_detection_labels(labels, out / "label_2" / f"{sid}.txt")


REPORT_FIELDS = ["scene_id", "mode", "status", "rounds", "candidates_tried", "inserted_total",
                 "added_points", "removed_points", "fail_no_placement", "fail_occluded",
                 "fail_hides_inserted", "fail_collision"]


def write_reports(outcomes: Sequence[SceneOutcome], bank: Sequence[InsertableObject], table: ClassTable,
                  out: Path) -> dict:
    """CSV reports (per scene, per insertion, per bank class) plus a summary figure.

    Returns the per-class insertion totals.
    """
    names = [table[c].name for c in table.insertable_ids]
    totals = Counter()
    failures = Counter()
    with open(out / "report.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(REPORT_FIELDS + [f"inserted_{n}" for n in names] + ["error"])
        for o in outcomes:
            r = o.report
            totals.update(r.inserted)
            failures.update(r.failures)
            wr.writerow([r.scene_id, r.mode, o.status, r.rounds, r.candidates_tried, r.total_inserted,
                         r.added_points, r.removed_points, r.failures["no_placement"], r.failures["occluded"],
                         r.failures["hides_inserted"], r.failures["collision"]]
                        + [r.inserted[n] for n in names] + [o.error])
    with open(out / "insertions.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scene_id", "class_id", "class_name", "source_frame", "bank_index", "instance_id",
                     "yaw_offset", "cx", "cy", "cz", "l", "w", "h", "yaw", "ground_z", "source_range",
                     "added", "removed"])
        for o in outcomes:
            for rec in o.report.insertions:
                b = rec.box
                wr.writerow([o.report.scene_id, rec.class_id, rec.class_name, rec.source_frame, rec.bank_index,
                             rec.instance_id, repr(rec.yaw_offset), repr(b.cx), repr(b.cy), repr(b.cz),
                             repr(b.l), repr(b.w), repr(b.h), repr(b.yaw), repr(rec.ground_z),
                             repr(rec.source_range), rec.added, rec.removed])
    bank_counts = Counter(o.class_id for o in bank)
    with open(out / "bank.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["class_id", "class_name", "bank_objects", "inserted"])
        for cid in sorted(bank_counts):
            n = table[cid].name
            wr.writerow([cid, n, bank_counts[cid], totals[n]])
    render.plot_report({n: totals[n] for n in names}, dict(failures), out / "report.png")
    return dict(totals)


def run_augment(ds: Dataset, cfg: RunConfig, out_dir, jobs: int = 1, maps: Optional[dict] = None,
                stats: Optional[dict] = None, debug: bool = False) -> list:
    """Augment every scene and write outputs and reports to ``out_dir``.

    Results do not depend on ``jobs``: each scene draws from its own seeded
    generator and the bank is built once up front.
    """
    out = Path(out_dir)
    table = cfg.class_table()
    for sub in (["scenes"] if ds.layout == "native" else ["velodyne", "labels", "label_2"]):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if debug:
        (out / "debug").mkdir(exist_ok=True)
    if ds.layout == "kitti" and ds.calib is not None:
        write_calib(ds.calib, out / "calib.txt")
    if ds.layout == "native" and ds.poses is not None and not cfg.augment.global_aug:
        write_poses(ds.poses, out / "poses.txt")
    bank = build_bank(ds, cfg, table, stats)
    _WORK.update(ds=ds, cfg=cfg, table=table, stats=stats, bank=bank, maps=maps, out=out, debug=debug)
    try:
        idx = range(len(ds.scenes))
        if jobs > 1:
            with multiprocessing.get_context("fork").Pool(jobs) as pool:
                outcomes = pool.map(_augment_one, idx, chunksize=1)
        else:
            outcomes = [_augment_one(i) for i in idx]
    finally:
        _WORK.clear()
    write_reports(outcomes, bank, table, out)
    cfg.dump(out / "config.yaml")
    return outcomes
