"""Deterministic synthetic lidar scenes with known ground truth.

A ray-casting sensor sweeps a world made of a ground plane (flat or ramped),
road and sidewalk polygons painted on it, vertical walls and box-shaped
objects. Every return is labeled by the surface it hit, so occlusion in the
generated scans is physically consistent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from matplotlib.path import Path as PolyPath

from .bevmap import GridSpec
from .errors import SchemaViolation
from .geometry import boxes_overlap_bev
from .kitti_io import Scene
from .model import LidarScan, OrientedBox, Pose, box_corners_bev

ROAD_LABEL = 40
SIDEWALK_LABEL = 48
BUILDING_LABEL = 50
TERRAIN_LABEL = 72

_INTENSITY = {ROAD_LABEL: 0.25, SIDEWALK_LABEL: 0.35, BUILDING_LABEL: 0.5, TERRAIN_LABEL: 0.3}

# typical (l, w, h) per SemanticKITTI class
TEMPLATE_DIMS = {
    10: (4.2, 1.8, 1.5),
    11: (1.7, 0.6, 1.1),
    15: (2.0, 0.8, 1.4),
    18: (8.0, 2.5, 3.2),
    30: (0.7, 0.6, 1.75),
    31: (1.8, 0.7, 1.75),
    32: (2.1, 0.8, 1.6),
}


@dataclass
class SensorModel:
    beams: int = 64
    azimuth_steps: int = 2048
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    max_range: float = 80.0

    def __post_init__(self):
        if self.beams < 1 or self.azimuth_steps < 1 or not self.max_range > 0:
            raise ValueError("sensor needs beams >= 1, azimuth_steps >= 1 and max_range > 0")
        if not self.fov_up_deg > self.fov_down_deg:
            raise ValueError("fov_up must exceed fov_down")

    def directions(self) -> np.ndarray:
        """Unit ray directions, one per (beam, azimuth step), at pixel centers of the matching range image."""
        up, down = math.radians(self.fov_up_deg), math.radians(self.fov_down_deg)
        elev = up - (np.arange(self.beams) + 0.5) * (up - down) / self.beams
        az = -math.pi + (np.arange(self.azimuth_steps) + 0.5) * 2 * math.pi / self.azimuth_steps
        e, a = np.meshgrid(elev, az, indexing="ij")
        return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)


@dataclass
class Wall:
    p0: tuple
    p1: tuple
    z_min: float
    z_max: float


@dataclass
class ObjectTemplate:
    class_id: int
    box: OrientedBox


@dataclass
class RandomObjects:
    class_id: int
    count: int
    surface: str = "road"  # road | sidewalk
    dims: Optional[tuple] = None
    jitter: float = 0.1


@dataclass
class SceneSpec:
    """World description. Coordinates are world-frame meters; the sensor
    sits at ``origin`` of each frame and moves by ``ego_step`` per frame."""

    ground_z: float = -1.73
    ground_slope: tuple = (0.0, 0.0)  # dz/dx, dz/dy
    has_ground: bool = True
    roads: list = field(default_factory=list)      # polygons [[x, y], ...]
    sidewalks: list = field(default_factory=list)
    walls: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    random_objects: list = field(default_factory=list)
    sensor: SensorModel = field(default_factory=SensorModel)
    seed: int = 0
    frames: int = 1
    ego_step: tuple = (0.0, 0.0)
    intensity_noise: float = 0.02

    def ground_height(self, x, y):
        return self.ground_z + self.ground_slope[0] * np.asarray(x) + self.ground_slope[1] * np.asarray(y)

    def to_dict(self) -> dict:
        """Plain-data form accepted by :meth:`from_dict`."""
        return {
            "ground_z": self.ground_z,
            "ground_slope": list(self.ground_slope),
            "has_ground": self.has_ground,
            "roads": [[list(p) for p in poly] for poly in self.roads],
            "sidewalks": [[list(p) for p in poly] for poly in self.sidewalks],
            "walls": [{"p0": list(w.p0), "p1": list(w.p1), "z_min": w.z_min, "z_max": w.z_max}
                      for w in self.walls],
            "objects": [{"class_id": o.class_id, "box": [float(v) for v in o.box.to_array()]}
                        for o in self.objects],
            "random_objects": [{"class_id": r.class_id, "count": r.count, "surface": r.surface,
                                "dims": None if r.dims is None else list(r.dims), "jitter": r.jitter}
                               for r in self.random_objects],
            "sensor": {"beams": self.sensor.beams, "azimuth_steps": self.sensor.azimuth_steps,
                       "fov_up_deg": self.sensor.fov_up_deg, "fov_down_deg": self.sensor.fov_down_deg,
                       "max_range": self.sensor.max_range},
            "seed": self.seed,
            "frames": self.frames,
            "ego_step": list(self.ego_step),
            "intensity_noise": self.intensity_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        """Build a spec from plain data (as loaded from JSON/YAML).

        Raises:
            SchemaViolation: on unknown keys or malformed values.
        """
        if not isinstance(d, dict):
            raise SchemaViolation("scene spec must be a mapping")
        known = {"ground_z", "ground_slope", "has_ground", "roads", "sidewalks", "walls", "objects",
                 "random_objects", "sensor", "seed", "frames", "ego_step", "intensity_noise"}
        unknown = set(d) - known
        if unknown:
            raise SchemaViolation(f"unknown scene spec keys: {sorted(unknown)}")
        try:
            spec = cls(
                ground_z=float(d.get("ground_z", -1.73)),
                ground_slope=tuple(float(v) for v in d.get("ground_slope", (0.0, 0.0))),
                has_ground=bool(d.get("has_ground", True)),
                roads=[[tuple(map(float, p)) for p in poly] for poly in d.get("roads", [])],
                sidewalks=[[tuple(map(float, p)) for p in poly] for poly in d.get("sidewalks", [])],
                walls=[Wall(tuple(map(float, w["p0"])), tuple(map(float, w["p1"])),
                            float(w["z_min"]), float(w["z_max"])) for w in d.get("walls", [])],
                objects=[ObjectTemplate(int(o["class_id"]), OrientedBox(*[float(v) for v in o["box"]]))
                         for o in d.get("objects", [])],
                random_objects=[RandomObjects(int(r["class_id"]), int(r["count"]), r.get("surface", "road"),
                                              tuple(r["dims"]) if r.get("dims") else None,
                                              float(r.get("jitter", 0.1)))
                                for r in d.get("random_objects", [])],
                sensor=SensorModel(**d.get("sensor", {})),
                seed=int(d.get("seed", 0)),
                frames=int(d.get("frames", 1)),
                ego_step=tuple(float(v) for v in d.get("ego_step", (0.0, 0.0))),
                intensity_noise=float(d.get("intensity_noise", 0.02)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"invalid scene spec: {exc}") from exc
        if len(spec.ground_slope) != 2 or len(spec.ego_step) != 2 or spec.frames < 1:
            raise SchemaViolation("ground_slope and ego_step need 2 values; frames must be >= 1")
        for r in spec.random_objects:
            if r.surface not in ("road", "sidewalk") or r.count < 0:
                raise SchemaViolation(f"bad random_objects entry for class {r.class_id}")
        return spec


@dataclass
class SyntheticFrame:
    scene: Scene
    pose: Pose          # sensor -> world
    gt_boxes: list      # sensor frame
    gt_classes: list
    hit_kind: np.ndarray  # per point: "ground" | "wall" | "object"

    @property
    def scan(self) -> LidarScan:
        return self.scene.scan


def _ray_ground(o, d, spec: SceneSpec) -> np.ndarray:
    sx, sy = spec.ground_slope
    denom = d[:, 2] - sx * d[:, 0] - sy * d[:, 1]
    num = spec.ground_z + sx * o[0] + sy * o[1] - o[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    return np.where((denom != 0) & (t > 0), t, np.inf)


def _ray_wall(o, d, w: Wall) -> np.ndarray:
    p0, p1 = np.array(w.p0), np.array(w.p1)
    e = p1 - p0
    # solve o_xy + t d_xy = p0 + s e
    det = d[:, 0] * (-e[1]) - d[:, 1] * (-e[0])
    rx, ry = p0[0] - o[0], p0[1] - o[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rx * (-e[1]) - ry * (-e[0])) / det
        s = (d[:, 0] * ry - d[:, 1] * rx) / det
    z = o[2] + t * d[:, 2]
    ok = (det != 0) & (t > 0) & (s >= 0) & (s <= 1) & (z >= w.z_min) & (z <= w.z_max)
    return np.where(ok, t, np.inf)


def _ray_box(o, d, box: OrientedBox) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = np.asarray(o) - box.center
    ol = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]])
    dl = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)
    half = np.array([box.l, box.w, box.h]) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - ol) / dl
        t2 = (half - ol) / dl
    tmin = np.where(dl == 0, np.where(np.abs(ol) <= half, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(dl == 0, np.where(np.abs(ol) <= half, np.inf, -np.inf), np.maximum(t1, t2))
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    ok = (near <= far) & (near > 0)
    return np.where(ok, near, np.inf)


def _in_polys(xy: np.ndarray, polys) -> np.ndarray:
    out = np.zeros(len(xy), bool)
    for poly in polys:
        out |= PolyPath(np.asarray(poly)).contains_points(xy)
    return out


def _place_random(spec: SceneSpec, rng: np.random.Generator, origin: np.ndarray,
                  taken: list) -> list:
    placed = []
    for group in spec.random_objects:
        polys = spec.roads if group.surface == "road" else spec.sidewalks
        if not polys:
            continue
        base = np.array(group.dims or TEMPLATE_DIMS.get(group.class_id, (1.0, 1.0, 1.0)), float)
        allpts = np.vstack([np.asarray(p) for p in polys])
        lo, hi = allpts.min(axis=0), allpts.max(axis=0)
        for _ in range(group.count):
            for _attempt in range(200):
                dims = base * (1 + rng.uniform(-group.jitter, group.jitter, 3))
                cx, cy = rng.uniform(lo, hi)
                yaw = float(rng.uniform(-math.pi, math.pi))
                if math.hypot(cx - origin[0], cy - origin[1]) < 4.0:
                    continue
                gz = float(spec.ground_height(cx, cy))
                box = OrientedBox(cx, cy, gz + dims[2] / 2, dims[0], dims[1], dims[2], yaw)
                corners = box_corners_bev(box)
                if not _in_polys(np.vstack([corners, [[cx, cy]]]), polys).all():
                    continue
                if any(boxes_overlap_bev(box, t.box) for t in taken + placed):
                    continue
                placed.append(ObjectTemplate(group.class_id, box))
                break
    return placed


def generate_frame(spec: SceneSpec, pose: Pose, rng: np.random.Generator, frame_id: str = "",
                   objects: Optional[list] = None) -> SyntheticFrame:
    """Ray-cast one scan with the sensor at ``pose`` (sensor -> world)."""
    o = pose.translation
    d = spec.sensor.directions() @ pose.rotation.T
    n = len(d)
    best_t = np.full(n, np.inf)
    kind = np.zeros(n, np.int8)  # 0 none, 1 ground, 2 wall, 3 object
    inst = np.zeros(n, np.int64)
    labels = np.zeros(n, np.int64)
    objects = spec.objects if objects is None else objects

    if spec.has_ground:
        t = _ray_ground(o, d, spec)
        better = t < best_t
        best_t[better], kind[better] = t[better], 1
    for w in spec.walls:
        t = _ray_wall(o, d, w)
        better = t < best_t
        best_t[better], kind[better] = t[better], 2
        labels[better] = BUILDING_LABEL
    for k, ob in enumerate(objects):
        t = _ray_box(o, d, ob.box)
        better = t < best_t
        best_t[better], kind[better] = t[better], 3
        labels[better], inst[better] = ob.class_id, k + 1

    hit = best_t <= spec.sensor.max_range
    world = o + d[hit] * best_t[hit, None]
    kind, labels, inst = kind[hit], labels[hit], inst[hit]
    g = kind == 1
    if g.any():
        gxy = world[g, :2]
        lab = np.full(len(gxy), TERRAIN_LABEL)
        lab[_in_polys(gxy, spec.sidewalks)] = SIDEWALK_LABEL
        lab[_in_polys(gxy, spec.roads)] = ROAD_LABEL
        labels[g] = lab
        inst[g] = 0

    base = np.array([_INTENSITY.get(int(c), 0.45) for c in labels]) if len(labels) else np.zeros(0)
    noise = rng.uniform(-spec.intensity_noise, spec.intensity_noise, len(labels))
    intensity = np.clip(base + noise, 0.0, 1.0)

    inv = pose.inverse()
    local = inv.apply(world)
    scan = LidarScan(np.column_stack([local, intensity]), labels, inst, frame_id)
    boxes, classes = [], []
    yaw_off = math.atan2(inv.rotation[1, 0], inv.rotation[0, 0])
    for ob in objects:
        c = inv.apply(ob.box.center[None])[0]
        boxes.append(ob.box.replace(cx=c[0], cy=c[1], cz=c[2], yaw=ob.box.yaw + yaw_off))
        classes.append(ob.class_id)
    names = np.array(["none", "ground", "wall", "object"])
    scene = Scene(scan, boxes, classes)
    return SyntheticFrame(scene, pose, boxes, classes, names[kind])


def generate_sequence(spec: SceneSpec, prefix: str = "") -> list[SyntheticFrame]:
    """All frames of ``spec``; deterministic for a fixed ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    frames = []
    for k in range(spec.frames):
        origin = np.array([k * spec.ego_step[0], k * spec.ego_step[1], 0.0])
        pose = Pose(np.eye(3), origin)
        extra = _place_random(spec, rng, origin, list(spec.objects))
        frames.append(generate_frame(spec, pose, rng, f"{prefix}{k:06d}", list(spec.objects) + extra))
    return frames


def generate(spec: SceneSpec) -> SyntheticFrame:
    """First frame of ``spec``."""
    return generate_sequence(replace(spec, frames=1))[0]


def ground_truth_masks(spec: SceneSpec, grid: GridSpec, pose: Pose = Pose.identity()) -> tuple:
    """Road and sidewalk masks at cell centers of ``grid`` (sensor frame given by ``pose``)."""
    ii, jj = np.meshgrid(np.arange(grid.width), np.arange(grid.height), indexing="ij")
    cx, cy = grid.cell_center(ii.ravel(), jj.ravel())
    local = np.column_stack([cx, cy, np.zeros_like(cx)])
    world = pose.apply(local)[:, :2]
    road = _in_polys(world, spec.roads).reshape(grid.width, grid.height)
    side = _in_polys(world, spec.sidewalks).reshape(grid.width, grid.height) & ~road
    return road, side


def street_spec(seed: int = 0, frames: int = 1, beams: int = 64, azimuth_steps: int = 2048,
                persons: int = 2, bicyclists: int = 2, cars: int = 2, extra_classes=(),
                walls: bool = True, ego_step=(4.0, 0.0), road_half_width: float = 4.0) -> SceneSpec:
    """Straight street along x: road, sidewalks on both sides, building walls behind them."""
    L = 80.0
    rw = road_half_width
    sw = rw + 3.0
    spec = SceneSpec(
        roads=[[(-L, -rw), (L, -rw), (L, rw), (-L, rw)]],
        sidewalks=[[(-L, rw), (L, rw), (L, sw), (-L, sw)], [(-L, -sw), (L, -sw), (L, -rw), (-L, -rw)]],
        walls=[Wall((-L, sw + 2), (L, sw + 2), -2.0, 6.0), Wall((-L, -sw - 2), (L, -sw - 2), -2.0, 6.0)]
        if walls else [],
        random_objects=[RandomObjects(30, persons, "sidewalk"), RandomObjects(31, bicyclists, "road"),
                        RandomObjects(10, cars, "road")] + [RandomObjects(c, 1, "road") for c in extra_classes],
        sensor=SensorModel(beams=beams, azimuth_steps=azimuth_steps),
        seed=seed,
        frames=frames,
        ego_step=tuple(ego_step),
    )
    return spec
