"""Run configuration: nested dataclasses with YAML/JSON loading and dotted overrides."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import yaml

from .augment import AugmentConfig, GlobalAugConfig, Task
from .bevmap import CELL_SIZE, PEDESTRIAN_BORDER
from .errors import SchemaViolation
from .model import DEFAULT_CLASSES, ROAD_CLASS_IDS, SIDEWALK_CLASS_IDS, ClassTable, SemanticClass, SurfaceKind
from .morphology import StructuringElement
from .spherical import SphericalParams

CONFIG_ENV = "LIDARINSERT_CONFIG"


@dataclass
class MapSection:
    cell_size: float = CELL_SIZE
    road_seed_radius: int = 3
    pedestrian_border: int = PEDESTRIAN_BORDER
    pedestrian_seed_radius: int = 2
    accumulate: bool = False
    window: int = 2
    road_class_ids: list = field(default_factory=lambda: sorted(ROAD_CLASS_IDS))
    sidewalk_class_ids: list = field(default_factory=lambda: sorted(SIDEWALK_CLASS_IDS))

    @property
    def road_seed(self) -> StructuringElement:
        return StructuringElement.disk(self.road_seed_radius)

    @property
    def pedestrian_seed(self) -> StructuringElement:
        return StructuringElement.disk(self.pedestrian_seed_radius)


@dataclass
class SphericalSection:
    rows: int = 64
    cols: int = 2048
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    closing_rows: int = 5
    closing_cols: int = 3


@dataclass
class AugmentSection:
    mode: str = "real3d"  # real3d | naive
    max_objects_per_scene: int = 10
    max_attempts_per_object: int = 50
    range_tolerance: float = 0.5
    global_aug: bool = False
    scale_range: list = field(default_factory=lambda: [0.95, 1.05])
    rotation_range_deg: list = field(default_factory=lambda: [-45.0, 45.0])
    flip_over_x: bool = True


@dataclass
class StatsSection:
    classes: list = field(default_factory=lambda: [10, 30, 31])
    min_samples: int = 10


def _class_entry(c: SemanticClass) -> dict:
    return {"id": c.id, "name": c.name, "surface": c.surface_kind.value,
            "min_points": c.min_insert_points, "insertable": c.insertable}


@dataclass
class RunConfig:
    task: str = "segmentation"
    seed: int = 0
    input_dir: str = ""
    output_dir: str = ""
    map: MapSection = field(default_factory=MapSection)
    spherical: SphericalSection = field(default_factory=SphericalSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    stats: StatsSection = field(default_factory=StatsSection)
    classes: list = field(default_factory=lambda: [_class_entry(c) for c in DEFAULT_CLASSES])

    def validate(self) -> "RunConfig":
        if self.task not in ("segmentation", "detection"):
            raise SchemaViolation(f"task must be segmentation or detection, got {self.task!r}")
        if self.augment.mode not in ("real3d", "naive"):
            raise SchemaViolation(f"augment.mode must be real3d or naive, got {self.augment.mode!r}")
        try:
            self.class_table()
            self.augment_config()
            self.spherical_params()
            self.map.road_seed, self.map.pedestrian_seed
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaViolation(f"invalid configuration: {exc}") from exc
        if self.map.cell_size <= 0 or self.map.window < 0:
            raise SchemaViolation("map.cell_size must be > 0 and map.window >= 0")
        return self

    def class_table(self) -> ClassTable:
        return ClassTable(SemanticClass(int(c["id"]), str(c["name"]), SurfaceKind(c["surface"]),
                                        int(c["min_points"]), bool(c.get("insertable", True)))
                          for c in self.classes)

    def spherical_params(self) -> SphericalParams:
        s = self.spherical
        return SphericalParams(s.rows, s.cols, s.fov_up_deg, s.fov_down_deg, s.closing_rows, s.closing_cols)

    def augment_config(self) -> AugmentConfig:
        a = self.augment
        gcfg = GlobalAugConfig(tuple(a.scale_range), tuple(a.rotation_range_deg), a.flip_over_x)
        return AugmentConfig(a.max_objects_per_scene, a.max_attempts_per_object, a.range_tolerance, gcfg,
                             self.seed, Task(self.task), self.spherical_params(),
                             road_class_ids=frozenset(self.map.road_class_ids),
                             sidewalk_class_ids=frozenset(self.map.sidewalk_class_ids))

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _from_dict(cls, d, where: str):
    if not isinstance(d, dict):
        raise SchemaViolation(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise SchemaViolation(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    obj = cls()
    for k, v in d.items():
        cur = getattr(obj, k)
        if is_dataclass(cur):
            v = _from_dict(type(cur), v, f"{where}.{k}" if where else k)
        setattr(obj, k, v)
    return obj


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_override(cfg: RunConfig, key: str, value) -> None:
    """Set a dotted key such as ``augment.max_objects_per_scene``."""
    parts = key.split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p) or not is_dataclass(getattr(target, p)):
            raise SchemaViolation(f"unknown config section {key!r}")
        target = getattr(target, p)
    if not hasattr(target, parts[-1]) or is_dataclass(getattr(target, parts[-1])):
        raise SchemaViolation(f"unknown config key {key!r}")
    setattr(target, parts[-1], _parse_value(value) if isinstance(value, str) else value)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the config file (``path`` or ``$LIDARINSERT_CONFIG``), then overrides.

    Raises:
        SchemaViolation: on unreadable files, unknown keys or invalid values.
    """
    path = path or os.environ.get(CONFIG_ENV) or None
    cfg = RunConfig()
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise SchemaViolation(f"cannot read config {path}: {exc}") from exc
        cfg = _from_dict(RunConfig, data or {}, "")
    for k, v in (overrides or {}).items():
        apply_override(cfg, k, v)
    return cfg.validate()
