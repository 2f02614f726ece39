"""Object insertion pipeline.

Objects are cut out of annotated scans into a bank, moved to a new location at
the same horizontal range by rotating about the sensor's vertical axis,
checked against the placement map and existing boxes, then pasted with
per-pixel occlusion handling. A naive paste-as-is baseline and the usual
global scene augmentations live here too.
"""
from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .bevmap import BevGrid, footprint_cells
from .errors import TooFewPoints
from .geometry import boxes_overlap_bev
from .model import (
    ROAD_CLASS_IDS,
    SIDEWALK_CLASS_IDS,
    InsertableObject,
    LidarScan,
    OrientedBox,
    SemanticClass,
    box_corners_bev,
    points_in_box,
)
from .spherical import SphericalParams, closed_projection, resolve_occlusion

# Instance ids at or above this value mark pasted objects in output labels.
INSERTED_INSTANCE_BASE = 0xF000


class Task(enum.Enum):
    DETECTION = "detection"
    SEGMENTATION = "segmentation"


@dataclass(frozen=True)
class GlobalAugConfig:
    scale_range: tuple = (0.95, 1.05)
    rotation_range_deg: tuple = (-45.0, 45.0)
    flip_over_x: bool = True

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError("scale_range must satisfy 0 < low <= high")
        if self.rotation_range_deg[0] > self.rotation_range_deg[1]:
            raise ValueError("rotation range is reversed")


@dataclass(frozen=True)
class AugmentConfig:
    max_objects_per_scene: int = 10
    max_attempts_per_object: int = 50
    range_tolerance: float = 0.5
    global_aug: GlobalAugConfig = field(default_factory=GlobalAugConfig)
    rng_seed: int = 0
    task: Task = Task.SEGMENTATION
    spherical: SphericalParams = field(default_factory=SphericalParams)
    inserted_instance_base: int = INSERTED_INSTANCE_BASE
    road_class_ids: frozenset = ROAD_CLASS_IDS
    sidewalk_class_ids: frozenset = SIDEWALK_CLASS_IDS


@dataclass(frozen=True)
class PlacementCandidate:
    yaw_offset: float
    box: OrientedBox
    ground_z: float


@dataclass
class InsertionRecord:
    class_id: int
    class_name: str
    source_frame: str
    bank_index: int
    instance_id: int
    yaw_offset: float
    box: OrientedBox
    ground_z: float
    source_range: float
    added: int
    removed: int


@dataclass
class SceneReport:
    scene_id: str
    mode: str
    rounds: int = 0
    candidates_tried: int = 0
    inserted: Counter = field(default_factory=Counter)
    failures: Counter = field(default_factory=Counter)
    added_points: int = 0
    removed_points: int = 0
    insertions: list = field(default_factory=list)

    @property
    def total_inserted(self) -> int:
        return sum(self.inserted.values())


@dataclass
class AugmentResult:
    scan: LidarScan
    boxes: list
    box_classes: list
    report: SceneReport
    instance_base: int = INSERTED_INSTANCE_BASE

    @property
    def inserted_mask(self) -> np.ndarray:
        inst = self.scan.instances
        if inst is None:
            return np.zeros(len(self.scan), bool)
        return inst >= self.instance_base


def extract_object(scan: LidarScan, box: OrientedBox, semantic_class: SemanticClass,
                   task: Task = Task.SEGMENTATION, instance_id: Optional[int] = None,
                   source_frame: Optional[str] = None, difficulty: Optional[str] = None,
                   road_class_ids=ROAD_CLASS_IDS, sidewalk_class_ids=SIDEWALK_CLASS_IDS) -> InsertableObject:
    """Cut an object's points out of ``scan``.

    Segmentation keeps in-box points carrying the class label (and the
    instance id, when given). Detection keeps in-box points except those
    labeled road or sidewalk.

    Raises:
        TooFewPoints: if nothing survives the filter.
    """
    idx = points_in_box(scan, box)
    if task is Task.SEGMENTATION:
        if scan.labels is None:
            raise ValueError("segmentation extraction needs per-point labels")
        keep = scan.labels[idx] == semantic_class.id
        if instance_id is not None:
            if scan.instances is None:
                raise ValueError("instance filtering needs per-point instance ids")
            keep &= scan.instances[idx] == instance_id
        idx = idx[keep]
    elif scan.labels is not None:
        ground = np.isin(scan.labels[idx], list(road_class_ids) + list(sidewalk_class_ids))
        idx = idx[~ground]
    if len(idx) == 0:
        raise TooFewPoints(f"no {semantic_class.name} points inside the box")
    pts = scan.points[idx]
    obj_scan = LidarScan(pts, np.full(len(pts), semantic_class.id), np.zeros(len(pts), np.int64),
                         scan.frame_id)
    return InsertableObject(obj_scan, box, semantic_class,
                            scan.frame_id if source_frame is None else source_frame, difficulty)


def _rotate_z(xyz: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    out = xyz.copy()
    out[:, 0] = c * xyz[:, 0] - s * xyz[:, 1]
    out[:, 1] = s * xyz[:, 0] + c * xyz[:, 1]
    return out


def yaw_offsets(source_range: float, cell_size: float) -> np.ndarray:
    """Rotation steps around the origin, one map cell apart at ``source_range``."""
    n = max(1, int(math.ceil(2 * math.pi * source_range / cell_size)))
    return 2 * math.pi * np.arange(n) / n


def enumerate_placements(obj: InsertableObject, grid: BevGrid, scene_boxes: Sequence[OrientedBox],
                         rng: np.random.Generator, range_tolerance: float = 0.5
                         ) -> Iterator[PlacementCandidate]:
    """Yield collision-free placements of ``obj`` at its source range, in random order.

    A placement is valid when every map cell under the box footprint carries
    the class's surface flag and a known elevation, and the box, seated on the
    elevation of its center cell, overlaps none of ``scene_boxes``.
    """
    kind = obj.semantic_class.surface_kind
    placeable = grid.placeable_mask(kind)
    if not placeable.any():
        return
    offsets = yaw_offsets(obj.source_range, grid.spec.cell_size)
    for k in rng.permutation(len(offsets)):
        theta = float(offsets[k])
        rotated = obj.box.rotated_about_origin(theta)
        ix, iy, ok = grid.spec.index([[rotated.cx, rotated.cy]])
        if not ok[0] or not placeable[ix[0], iy[0]]:
            continue
        fi, fj, inside = footprint_cells(grid.spec, box_corners_bev(rotated))
        if not inside or not placeable[fi, fj].all():
            continue
        ground_z = float(grid.elevation[ix[0], iy[0]])
        placed = rotated.replace(cz=ground_z + rotated.h / 2.0)
        if abs(placed.bev_range - obj.source_range) > range_tolerance:
            continue
        if any(boxes_overlap_bev(placed, b) for b in scene_boxes):
            continue
        yield PlacementCandidate(theta, placed, ground_z)


def place_object(obj: InsertableObject, cand: PlacementCandidate) -> InsertableObject:
    """Rotate the object about the origin's z-axis and drop it onto the ground."""
    pts = obj.points.points.copy()
    pts[:, :3] = _rotate_z(pts[:, :3], cand.yaw_offset)
    rotated = obj.box.rotated_about_origin(cand.yaw_offset)
    pts[:, 2] += cand.ground_z - rotated.bottom
    moved = LidarScan(pts, obj.points.labels, obj.points.instances, obj.points.frame_id)
    box = rotated.replace(cz=cand.ground_z + rotated.h / 2.0)
    return InsertableObject(moved, box, obj.semantic_class, obj.source_frame, obj.difficulty,
                            obj.source_range)


def _usable_bank(bank: Sequence[InsertableObject], scene_id: str) -> dict:
    """Bank grouped by class id, excluding the scene's own objects and non-easy tagged ones."""
    by_class = defaultdict(list)
    for i, obj in enumerate(bank):
        if scene_id and obj.source_frame == scene_id:
            continue
        if obj.difficulty is not None and obj.difficulty != "easy":
            continue
        by_class[obj.class_id].append(i)
    return dict(sorted(by_class.items()))


def _relabel(obj: InsertableObject, instance_id: int) -> InsertableObject:
    n = len(obj.points)
    pts = LidarScan(obj.points.points, np.full(n, obj.class_id), np.full(n, instance_id),
                    obj.points.frame_id)
    return InsertableObject(pts, obj.box, obj.semantic_class, obj.source_frame, obj.difficulty,
                            obj.source_range)


def _keeps_earlier_insertions(scan: LidarScan, insertions: Sequence[InsertionRecord],
                              bank: Sequence[InsertableObject]) -> bool:
    """True when every earlier pasted object still has more than its minimum point count."""
    if not insertions:
        return True
    ids, counts = np.unique(scan.instances, return_counts=True)
    have = dict(zip(ids.tolist(), counts.tolist()))
    return all(have.get(r.instance_id, 0) > bank[r.bank_index].min_points for r in insertions)


def augment_scene(scene: LidarScan, scene_boxes: Sequence[OrientedBox], bank: Sequence[InsertableObject],
                  grid: BevGrid, cfg: AugmentConfig, rng: np.random.Generator,
                  scene_box_classes: Optional[Sequence[int]] = None) -> AugmentResult:
    """Insert up to ``cfg.max_objects_per_scene`` bank objects into ``scene``.

    Each round draws a class uniformly among the usable bank classes, then an
    object of that class, and walks its placement candidates (at most
    ``cfg.max_attempts_per_object``) until one passes occlusion resolution.
    Committed boxes become obstacles for later rounds, and a candidate that
    would hide an earlier pasted object below its point threshold is rejected.
    """
    report = SceneReport(scene.frame_id, "real3d")
    boxes = list(scene_boxes)
    box_classes = list(scene_box_classes) if scene_box_classes is not None else [-1] * len(boxes)
    current = scene.with_labels()
    usable = _usable_bank(bank, scene.frame_id)
    if not usable or cfg.max_objects_per_scene <= 0:
        return AugmentResult(scene, boxes, box_classes, report, cfg.inserted_instance_base)

    classes = list(usable)
    scene_image = None
    for _ in range(cfg.max_objects_per_scene):
        report.rounds += 1
        cls = classes[int(rng.integers(len(classes)))]
        members = usable[cls]
        bank_index = members[int(rng.integers(len(members)))]
        obj = bank[bank_index]
        instance_id = cfg.inserted_instance_base + report.total_inserted
        if scene_image is None:
            scene_image = closed_projection(current, cfg.spherical)
        tried = 0
        committed = False
        for cand in enumerate_placements(obj, grid, boxes, rng, cfg.range_tolerance):
            if tried >= cfg.max_attempts_per_object:
                break
            tried += 1
            placed = _relabel(place_object(obj, cand), instance_id)
            res = resolve_occlusion(current, placed, cfg.spherical, scene_image=scene_image)
            if res.success and not _keeps_earlier_insertions(res.augmented, report.insertions, bank):
                report.failures["hides_inserted"] += 1
                continue
            if res.success:
                current = res.augmented
                scene_image = None
                boxes.append(placed.box)
                box_classes.append(obj.class_id)
                report.inserted[obj.semantic_class.name] += 1
                report.added_points += res.added_count
                report.removed_points += res.removed_count
                report.insertions.append(InsertionRecord(
                    obj.class_id, obj.semantic_class.name, obj.source_frame, bank_index, instance_id,
                    cand.yaw_offset, placed.box, cand.ground_z, obj.source_range,
                    res.added_count, res.removed_count))
                committed = True
                break
        report.candidates_tried += tried
        if not committed:
            report.failures["no_placement" if tried == 0 else "occluded"] += 1
    return AugmentResult(current, boxes, box_classes, report, cfg.inserted_instance_base)


def naive_gt_aug(scene: LidarScan, scene_boxes: Sequence[OrientedBox], bank: Sequence[InsertableObject],
                 cfg: AugmentConfig, rng: np.random.Generator,
                 scene_box_classes: Optional[Sequence[int]] = None) -> AugmentResult:
    """Baseline: paste bank objects at their source pose; drop any that collide."""
    report = SceneReport(scene.frame_id, "naive")
    boxes = list(scene_boxes)
    box_classes = list(scene_box_classes) if scene_box_classes is not None else [-1] * len(boxes)
    current = scene.with_labels()
    usable = _usable_bank(bank, scene.frame_id)
    if not usable or cfg.max_objects_per_scene <= 0:
        return AugmentResult(scene, boxes, box_classes, report, cfg.inserted_instance_base)
    classes = list(usable)
    for _ in range(cfg.max_objects_per_scene):
        report.rounds += 1
        cls = classes[int(rng.integers(len(classes)))]
        members = usable[cls]
        bank_index = members[int(rng.integers(len(members)))]
        obj = bank[bank_index]
        if any(boxes_overlap_bev(obj.box, b) for b in boxes):
            report.failures["collision"] += 1
            continue
        instance_id = cfg.inserted_instance_base + report.total_inserted
        pasted = _relabel(obj, instance_id)
        current = LidarScan.concatenate([current, pasted.points], frame_id=scene.frame_id)
        boxes.append(obj.box)
        box_classes.append(obj.class_id)
        n = len(obj.points)
        report.inserted[obj.semantic_class.name] += 1
        report.added_points += n
        report.insertions.append(InsertionRecord(
            obj.class_id, obj.semantic_class.name, obj.source_frame, bank_index, instance_id,
            0.0, obj.box, obj.box.bottom, obj.source_range, n, 0))
    return AugmentResult(current, boxes, box_classes, report, cfg.inserted_instance_base)


def apply_global_transform(scan: LidarScan, boxes: Sequence[OrientedBox], scale: float = 1.0,
                           angle: float = 0.0, flip: bool = False) -> tuple:
    """Flip y -> -y (optional), rotate about z by ``angle``, then scale uniformly."""
    xyz = scan.xyz.copy()
    out_boxes = list(boxes)
    if flip:
        xyz[:, 1] = -xyz[:, 1]
        out_boxes = [b.replace(cy=-b.cy, yaw=-b.yaw) for b in out_boxes]
    if angle != 0.0:
        xyz = _rotate_z(xyz, angle)
        out_boxes = [b.rotated_about_origin(angle) for b in out_boxes]
    if scale != 1.0:
        xyz = xyz * scale
        out_boxes = [b.replace(cx=b.cx * scale, cy=b.cy * scale, cz=b.cz * scale,
                               l=b.l * scale, w=b.w * scale, h=b.h * scale) for b in out_boxes]
    pts = np.column_stack([xyz, scan.intensity])
    return LidarScan(pts, scan.labels, scan.instances, scan.frame_id), out_boxes


def global_augment(scan: LidarScan, boxes: Sequence[OrientedBox], gcfg: GlobalAugConfig,
                   rng: np.random.Generator) -> tuple:
    """Random scene-level flip, rotation and scaling.

    Returns ``(scan, boxes, params)`` where params records the drawn values.
    """
    flip = bool(gcfg.flip_over_x and rng.random() < 0.5)
    angle = math.radians(float(rng.uniform(*gcfg.rotation_range_deg)))
    scale = float(rng.uniform(*gcfg.scale_range))
    out_scan, out_boxes = apply_global_transform(scan, boxes, scale, angle, flip)
    return out_scan, out_boxes, {"scale": scale, "angle": angle, "flip": flip}
