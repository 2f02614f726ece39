"""Shared domain types: scans, boxes, poses and the semantic class table.

Coordinates are in the sensor frame: x forward, y left, z up, meters.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    a = (float(angle) + math.pi) % TWO_PI - math.pi
    if a >= math.pi:  # float rounding at the upper edge
        a -= TWO_PI
    return a


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class SurfaceKind(enum.Enum):
    ROAD = "road"
    PEDESTRIAN_AREA = "pedestrian_area"


@dataclass(frozen=True)
class SemanticClass:
    id: int
    name: str
    surface_kind: SurfaceKind
    min_insert_points: int = 0
    insertable: bool = True

    def __post_init__(self):
        if self.min_insert_points < 0:
            raise ValueError("min_insert_points must be >= 0")


# SemanticKITTI class codes. Minimum point counts for insertion follow the
# per-class thresholds used for SemanticKITTI augmentation.
DEFAULT_CLASSES: tuple[SemanticClass, ...] = (
    SemanticClass(10, "car", SurfaceKind.ROAD, 0, insertable=False),
    SemanticClass(11, "bicycle", SurfaceKind.ROAD, 10),
    SemanticClass(15, "motorcycle", SurfaceKind.ROAD, 10),
    SemanticClass(18, "truck", SurfaceKind.ROAD, 40),
    SemanticClass(20, "other-vehicle", SurfaceKind.ROAD, 0, insertable=False),
    SemanticClass(30, "person", SurfaceKind.PEDESTRIAN_AREA, 20),
    SemanticClass(31, "bicyclist", SurfaceKind.ROAD, 30),
    SemanticClass(32, "motorcyclist", SurfaceKind.ROAD, 30),
)
ROAD_CLASS_IDS = frozenset({40})
SIDEWALK_CLASS_IDS = frozenset({48})
UNLABELED = 0

# KITTI detection class names mapped onto the SemanticKITTI codes above.
DETECTION_NAME_TO_ID = {"Car": 10, "Van": 20, "Truck": 18, "Pedestrian": 30, "Cyclist": 31}
DETECTION_NAMES = {v: k for k, v in DETECTION_NAME_TO_ID.items()}


class ClassTable:
    """Lookup of :class:`SemanticClass` entries by id or name."""

    def __init__(self, classes: Iterable[SemanticClass] = DEFAULT_CLASSES):
        self.classes = tuple(classes)
        self._by_id = {c.id: c for c in self.classes}
        self._by_name = {c.name: c for c in self.classes}

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self._by_id

    def __getitem__(self, class_id) -> SemanticClass:
        return self._by_id[int(class_id)]

    def by_name(self, name: str) -> SemanticClass:
        return self._by_name[name]

    def get(self, class_id, default=None):
        return self._by_id.get(int(class_id), default)

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.classes]

    @property
    def insertable_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.insertable]


@dataclass(frozen=True, eq=False)
class LidarScan:
    """Ordered point cloud.

    ``points`` is an (N, 4) float64 array of x, y, z, intensity. ``labels`` and
    ``instances`` are optional (N,) integer arrays.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    instances: Optional[np.ndarray] = None
    frame_id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if pts.size and (pts[:, 3].min() < 0.0 or pts[:, 3].max() > 1.0):
            raise ValueError("intensity must lie in [0, 1]")
        object.__setattr__(self, "points", _frozen(pts))
        n = len(pts)
        for name in ("labels", "instances"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.array(val, dtype=np.int64).reshape(-1)
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} points")
            object.__setattr__(self, name, _frozen(arr))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def subset(self, index) -> "LidarScan":
        return LidarScan(
            self.points[index],
            None if self.labels is None else self.labels[index],
            None if self.instances is None else self.instances[index],
            self.frame_id,
        )

    def with_labels(self, labels=None, instances=None) -> "LidarScan":
        """Copy with missing label channels filled (labels 0, instances 0)."""
        n = len(self)
        if labels is None:
            labels = self.labels if self.labels is not None else np.zeros(n, np.int64)
        if instances is None:
            instances = self.instances if self.instances is not None else np.zeros(n, np.int64)
        return LidarScan(self.points, labels, instances, self.frame_id)

    @classmethod
    def empty(cls, frame_id: str = "", labeled: bool = True) -> "LidarScan":
        z = np.zeros(0, np.int64) if labeled else None
        return cls(np.zeros((0, 4)), z, z, frame_id)

    @staticmethod
    def concatenate(scans: Sequence["LidarScan"], frame_id: Optional[str] = None) -> "LidarScan":
        scans = list(scans)
        labeled = all(s.labels is not None for s in scans)
        inst = all(s.instances is not None for s in scans)
        return LidarScan(
            np.concatenate([s.points for s in scans]) if scans else np.zeros((0, 4)),
            np.concatenate([s.labels for s in scans]) if scans and labeled else None,
            np.concatenate([s.instances for s in scans]) if scans and inst else None,
            scans[0].frame_id if frame_id is None and scans else (frame_id or ""),
        )

    def equals(self, other: "LidarScan") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            same(self.points, other.points)
            and same(self.labels, other.labels)
            and same(self.instances, other.instances)
        )


@dataclass(frozen=True)
class OrientedBox:
    """3D box with center, dimensions (l along heading, w, h) and yaw."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("box parameters must be finite")
        # zero dims are allowed so degenerate fits can be represented and repaired
        if min(self.l, self.w, self.h) < 0:
            raise ValueError("box dimensions must be non-negative")
        for name in ("cx", "cy", "cz", "l", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def is_degenerate(self) -> bool:
        return min(self.l, self.w, self.h) <= 0.0

    @property
    def bottom(self) -> float:
        return self.cz - self.h / 2.0

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def bev_range(self) -> float:
        return math.hypot(self.cx, self.cy)

    def to_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw])

    @classmethod
    def from_array(cls, arr) -> "OrientedBox":
        return cls(*[float(v) for v in arr[:7]])

    def replace(self, **kw) -> "OrientedBox":
        return replace(self, **kw)

    def rotated_about_origin(self, angle: float) -> "OrientedBox":
        c, s = math.cos(angle), math.sin(angle)
        return replace(
            self,
            cx=c * self.cx - s * self.cy,
            cy=s * self.cx + c * self.cy,
            yaw=self.yaw + angle,
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping sensor coordinates to a global frame."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    atol: float = 1e-6

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.abs(r @ r.T - np.eye(3)).max() > self.atol:
            raise ValueError("pose rotation is not orthonormal")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, atol: float = 1e-6) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3], atol=atol)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = math.cos(yaw), math.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((3, 4))
        m[:, :3] = self.rotation
        m[:, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation, atol=self.atol)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            atol=max(self.atol, other.atol),
        )

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation


def transform_scan(scan: LidarScan, pose: Pose) -> LidarScan:
    """Apply a rigid transform to every point; intensity and labels are kept."""
    pts = scan.points.copy()
    pts[:, :3] = pose.apply(scan.xyz)
    return LidarScan(pts, scan.labels, scan.instances, scan.frame_id)


def box_corners_bev(box: OrientedBox) -> np.ndarray:
    """Footprint corners of ``box`` as a (4, 2) array, counter-clockwise."""
    hl, hw = box.l / 2.0, box.w / 2.0
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def box_corners_3d(box: OrientedBox) -> np.ndarray:
    """(8, 3) corners: the 4 bottom corners then the 4 top corners."""
    bev = box_corners_bev(box)
    lo = np.column_stack([bev, np.full(4, box.cz - box.h / 2)])
    hi = np.column_stack([bev, np.full(4, box.cz + box.h / 2)])
    return np.vstack([lo, hi])


def _xyz(points) -> np.ndarray:
    if isinstance(points, LidarScan):
        return points.xyz
    return np.asarray(points, dtype=np.float64).reshape(-1, np.shape(points)[-1])[:, :3]


def points_in_box(scan, box: OrientedBox, eps: float = 1e-9) -> np.ndarray:
    """Indices of points inside ``box``; points on a face count as inside.

    ``scan`` may be a :class:`LidarScan` or an (N, >=3) array.
    """
    xyz = _xyz(scan)
    if len(xyz) == 0:
        return np.zeros(0, dtype=np.int64)
    d = xyz - np.array([box.cx, box.cy, box.cz])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * d[:, 0] + s * d[:, 1]
    v = -s * d[:, 0] + c * d[:, 1]
    inside = (
        (np.abs(u) <= box.l / 2 + eps)
        & (np.abs(v) <= box.w / 2 + eps)
        & (np.abs(d[:, 2]) <= box.h / 2 + eps)
    )
    return np.flatnonzero(inside)


@dataclass(frozen=True, eq=False)
class InsertableObject:
    """An object cut out of a source scan, ready to be pasted elsewhere.

    ``points`` carries the object's own labels (class id) and instance ids.
    ``source_range`` is the horizontal distance of the box center from the
    source sensor.
    """

    points: LidarScan
    box: OrientedBox
    semantic_class: SemanticClass
    source_frame: str = ""
    difficulty: Optional[str] = None
    source_range: float = field(default=float("nan"))

    def __post_init__(self):
        if len(self.points) < 1:
            raise ValueError("an insertable object needs at least one point")
        rng = self.box.bev_range if math.isnan(self.source_range) else float(self.source_range)
        if not rng > 0:
            raise ValueError("source_range must be positive")
        object.__setattr__(self, "source_range", rng)

    @property
    def class_id(self) -> int:
        return self.semantic_class.id

    @property
    def min_points(self) -> int:
        return self.semantic_class.min_insert_points
