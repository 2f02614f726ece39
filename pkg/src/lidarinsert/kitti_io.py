"""Readers and writers for KITTI / SemanticKITTI files and the native scene format.

Binary formats are little-endian regardless of host:

* velodyne ``.bin``: float32 records (x, y, z, intensity)
* SemanticKITTI ``.label``: uint32 per point, class in the low 16 bits,
  instance id in the high 16 bits
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CountMismatch, MalformedFile, MissingCalib, SchemaViolation
from .model import LidarScan, OrientedBox, Pose

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
SCENE_SCHEMA = "lidarinsert.scene"
SCENE_VERSION = 1


def read_scan(path, frame_id: Optional[str] = None) -> LidarScan:
    data = Path(path).read_bytes()
    if len(data) % 16:
        raise MalformedFile(f"{path}: {len(data)} bytes is not a multiple of 16")
    pts = np.frombuffer(data, dtype=SCAN_DTYPE).reshape(-1, 4).astype(np.float64)
    return LidarScan(pts, frame_id=Path(path).stem if frame_id is None else frame_id)


def write_scan(scan: LidarScan, path) -> None:
    Path(path).write_bytes(np.ascontiguousarray(scan.points, dtype=SCAN_DTYPE).tobytes())


def read_labels(path, expected_count: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Return (semantic class, instance id) arrays.

    Raises:
        MalformedFile: if the byte length is not a multiple of 4.
        CountMismatch: if ``expected_count`` is given and differs.
    """
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise MalformedFile(f"{path}: {len(data)} bytes is not a multiple of 4")
    raw = np.frombuffer(data, dtype=LABEL_DTYPE)
    if expected_count is not None and len(raw) != expected_count:
        raise CountMismatch(f"{path}: {len(raw)} labels for {expected_count} points")
    return (raw & 0xFFFF).astype(np.int64), (raw >> 16).astype(np.int64)


def pack_labels(labels, instances) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    instances = np.asarray(instances, dtype=np.int64)
    if labels.shape != instances.shape:
        raise CountMismatch("labels and instances differ in length")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF
                        or instances.min() < 0 or instances.max() > 0xFFFF):
        raise ValueError("labels and instance ids must fit in 16 bits")
    return (labels.astype(np.uint32) | (instances.astype(np.uint32) << 16)).astype(LABEL_DTYPE)


def write_labels(labels, instances, path) -> None:
    Path(path).write_bytes(pack_labels(labels, instances).tobytes())


def read_labeled_scan(scan_path, label_path, frame_id: Optional[str] = None) -> LidarScan:
    scan = read_scan(scan_path, frame_id)
    labels, instances = read_labels(label_path, expected_count=len(scan))
    return LidarScan(scan.points, labels, instances, scan.frame_id)


def _parse_floats(path, lineno, tokens) -> list:
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise MalformedFile(f"{path}:{lineno}: {exc}") from exc


def read_poses(path, atol: float = 1e-4) -> list[Pose]:
    """One pose per line: 12 numbers, the row-major 3x4 matrix."""
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 12:
            raise MalformedFile(f"{path}:{lineno}: expected 12 values, got {len(tok)}")
        m = np.array(_parse_floats(path, lineno, tok)).reshape(3, 4)
        try:
            poses.append(Pose.from_matrix(m, atol=atol))
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
    return poses


def write_poses(poses: Sequence[Pose], path) -> None:
    lines = [" ".join(repr(float(v)) for v in p.as_matrix().ravel()) for p in poses]
    Path(path).write_text("".join(line + "\n" for line in lines))


def velodyne_poses(camera_poses: Sequence[Pose], tr_velo_to_cam: Pose) -> list[Pose]:
    """Convert odometry poses given in the camera frame to lidar-frame poses."""
    inv = tr_velo_to_cam.inverse()
    return [inv.compose(p).compose(tr_velo_to_cam) for p in camera_poses]


@dataclass
class Calibration:
    """Lidar to rectified-camera transform (plus optional projection ``P2``)."""

    tr_velo_to_cam: np.ndarray  # 3x4
    r0_rect: np.ndarray = field(default_factory=lambda: np.eye(3))
    p2: Optional[np.ndarray] = None  # 3x4

    def __post_init__(self):
        self.tr_velo_to_cam = np.asarray(self.tr_velo_to_cam, dtype=np.float64).reshape(3, 4)
        self.r0_rect = np.asarray(self.r0_rect, dtype=np.float64).reshape(3, 3)
        if self.p2 is not None:
            self.p2 = np.asarray(self.p2, dtype=np.float64).reshape(3, 4)

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]))

    @property
    def velo_to_rect(self) -> np.ndarray:
        """4x4 homogeneous lidar -> rectified camera transform."""
        m = np.eye(4)
        m[:3, :4] = self.r0_rect @ self.tr_velo_to_cam
        return m

    def check(self) -> None:
        rot = self.velo_to_rect[:3, :3]
        if not np.all(np.isfinite(rot)) or abs(np.linalg.det(rot)) < 1e-9:
            raise MissingCalib("calibration transform is not invertible")

    def lidar_to_rect(self, xyz) -> np.ndarray:
        self.check()
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        m = self.velo_to_rect
        return xyz @ m[:3, :3].T + m[:3, 3]

    def rect_to_lidar(self, xyz) -> np.ndarray:
        self.check()
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        m = self.velo_to_rect
        return np.linalg.solve(m[:3, :3], (xyz - m[:3, 3]).T).T


def read_calib(path) -> Calibration:
    """KITTI calibration text: ``KEY: v v v ...`` lines.

    ``Tr_velo_to_cam`` (detection) or ``Tr`` (odometry) is required.
    """
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if ":" not in line:
            raise MalformedFile(f"{path}:{lineno}: expected 'KEY: values'")
        key, rest = line.split(":", 1)
        values[key.strip()] = np.array(_parse_floats(path, lineno, rest.split()))
    tr = values.get("Tr_velo_to_cam", values.get("Tr"))
    if tr is None or tr.size != 12:
        raise MissingCalib(f"{path}: no 3x4 lidar-to-camera transform")
    r0 = values.get("R0_rect")
    p2 = values.get("P2")
    return Calibration(tr, np.eye(3) if r0 is None else r0.reshape(3, 3), p2)


def write_calib(calib: Calibration, path) -> None:
    rows = []
    if calib.p2 is not None:
        rows.append(("P2", calib.p2))
    rows.append(("R0_rect", calib.r0_rect))
    rows.append(("Tr_velo_to_cam", calib.tr_velo_to_cam))
    Path(path).write_text("".join(
        f"{k}: {' '.join(repr(float(v)) for v in np.ravel(m))}\n" for k, m in rows))


@dataclass
class DetectionLabel:
    """One line of a KITTI detection label file (camera frame)."""

    name: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple  # left, top, right, bottom (pixels)
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: Optional[float] = None

    def to_line(self) -> str:
        vals = [self.truncated, self.occluded, self.alpha, *self.bbox,
                self.h, self.w, self.l, self.x, self.y, self.z, self.rotation_y]
        out = " ".join([self.name] + [repr(float(v)) if i != 1 else str(int(v)) for i, v in enumerate(vals)])
        if self.score is not None:
            out += " " + repr(float(self.score))
        return out

    @property
    def difficulty(self) -> str:
        return "easy" if self.occluded == 0 else "hard"


def read_detection_labels(path) -> list[DetectionLabel]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) not in (15, 16):
            raise MalformedFile(f"{path}:{lineno}: expected 15 or 16 fields, got {len(tok)}")
        v = _parse_floats(path, lineno, tok[1:])
        out.append(DetectionLabel(tok[0], v[0], int(v[1]), v[2], tuple(v[3:7]), v[7], v[8], v[9],
                                  v[10], v[11], v[12], v[13], v[14] if len(v) == 15 else None))
    return out


def write_detection_labels(labels: Sequence[DetectionLabel], path) -> None:
    Path(path).write_text("".join(lab.to_line() + "\n" for lab in labels))


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def boxes_lidar_to_camera(boxes: Sequence[OrientedBox], calib: Optional[Calibration],
                          names: Optional[Sequence[str]] = None,
                          occluded: Optional[Sequence[int]] = None) -> list[DetectionLabel]:
    """Lidar-frame boxes to KITTI camera labels.

    Location is the bottom-face center in the rectified camera frame and
    ``rotation_y = -yaw - pi/2``.

    Raises:
        MissingCalib: if ``calib`` is None or not invertible.
    """
    if calib is None:
        raise MissingCalib("boxes_lidar_to_camera needs a calibration")
    calib.check()
    out = []
    for i, b in enumerate(boxes):
        loc = calib.lidar_to_rect([b.cx, b.cy, b.cz - b.h / 2])[0]
        ry = _wrap(-b.yaw - math.pi / 2)
        alpha = _wrap(-math.atan2(-b.cy, b.cx) + ry)
        bbox = _image_bbox(b, calib)
        out.append(DetectionLabel(names[i] if names else "DontCare", 0.0,
                                  int(occluded[i]) if occluded is not None else 0, alpha, bbox,
                                  b.h, b.w, b.l, loc[0], loc[1], loc[2], ry))
    return out


def _image_bbox(box: OrientedBox, calib: Calibration) -> tuple:
    if calib.p2 is None:
        return (0.0, 0.0, 0.0, 0.0)
    from .model import box_corners_3d

    pts = calib.lidar_to_rect(box_corners_3d(box))
    if np.any(pts[:, 2] <= 0):
        return (0.0, 0.0, 0.0, 0.0)
    hom = np.hstack([pts, np.ones((8, 1))]) @ calib.p2.T
    uv = hom[:, :2] / hom[:, 2:3]
    return (float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max()))


def boxes_camera_to_lidar(labels: Sequence[DetectionLabel], calib: Optional[Calibration]) -> list[OrientedBox]:
    """Inverse of :func:`boxes_lidar_to_camera`."""
    if calib is None:
        raise MissingCalib("boxes_camera_to_lidar needs a calibration")
    calib.check()
    out = []
    for lab in labels:
        bottom = calib.rect_to_lidar([lab.x, lab.y, lab.z])[0]
        out.append(OrientedBox(bottom[0], bottom[1], bottom[2] + lab.h / 2, lab.l, lab.w, lab.h,
                               -lab.rotation_y - math.pi / 2))
    return out


# -- native scene format -------------------------------------------------------

@dataclass
class Scene:
    """A scan with its boxes, box class ids and free-form map parameters."""

    scan: LidarScan
    boxes: list = field(default_factory=list)
    box_classes: list = field(default_factory=list)
    box_difficulty: list = field(default_factory=list)
    map_params: dict = field(default_factory=dict)

    @property
    def scene_id(self) -> str:
        return self.scan.frame_id


def _box_to_dict(b: OrientedBox) -> dict:
    return {"cx": b.cx, "cy": b.cy, "cz": b.cz, "l": b.l, "w": b.w, "h": b.h, "yaw": b.yaw}


def scene_to_dict(scene: Scene) -> dict:
    s = scene.scan
    boxes = []
    for i, b in enumerate(scene.boxes):
        d = _box_to_dict(b)
        d["class_id"] = int(scene.box_classes[i]) if i < len(scene.box_classes) else -1
        if i < len(scene.box_difficulty) and scene.box_difficulty[i] is not None:
            d["difficulty"] = scene.box_difficulty[i]
        boxes.append(d)
    return {
        "schema": SCENE_SCHEMA,
        "version": SCENE_VERSION,
        "frame_id": s.frame_id,
        "points": s.points.tolist(),
        "labels": None if s.labels is None else s.labels.tolist(),
        "instances": None if s.instances is None else s.instances.tolist(),
        "boxes": boxes,
        "map_params": scene.map_params,
    }


def scene_from_dict(d: dict) -> Scene:
    if not isinstance(d, dict) or d.get("schema") != SCENE_SCHEMA:
        raise SchemaViolation(f"not a {SCENE_SCHEMA} document")
    if d.get("version") != SCENE_VERSION:
        raise SchemaViolation(f"unsupported scene version {d.get('version')!r}")
    try:
        pts = np.array(d["points"], dtype=np.float64).reshape(-1, 4)
        scan = LidarScan(pts, d.get("labels"), d.get("instances"), str(d.get("frame_id", "")))
        boxes, classes, diff = [], [], []
        for b in d.get("boxes", []):
            boxes.append(OrientedBox(b["cx"], b["cy"], b["cz"], b["l"], b["w"], b["h"], b["yaw"]))
            classes.append(int(b.get("class_id", -1)))
            diff.append(b.get("difficulty"))
        params = d.get("map_params") or {}
        if not isinstance(params, dict):
            raise SchemaViolation("map_params must be an object")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaViolation):
            raise
        raise SchemaViolation(f"invalid scene document: {exc}") from exc
    if all(v is None for v in diff):
        diff = []
    return Scene(scan, boxes, classes, diff, params)


def scene_to_json(scene: Scene) -> str:
    # json renders floats with repr, which keeps every float64 exactly
    return json.dumps(scene_to_dict(scene), separators=(",", ":")) + "\n"


def write_scene_json(scene: Scene, path) -> None:
    atomic_write_bytes(path, scene_to_json(scene).encode())


def read_scene_json(path) -> Scene:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc
    return scene_from_dict(d)


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
