"""Spherical range-image projection and per-pixel occlusion resolution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import morphology
from .bevmap import write_pgm
from .model import InsertableObject, LidarScan
from .morphology import StructuringElement

CLOSING_SEED = StructuringElement.rect(5, 3)  # 5 rows x 3 columns


@dataclass(frozen=True)
class SphericalParams:
    rows: int = 64
    cols: int = 2048
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    closing_rows: int = 5
    closing_cols: int = 3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("range image needs at least one row and column")
        if not self.fov_up_deg > self.fov_down_deg:
            raise ValueError("fov_up must exceed fov_down")

    @property
    def fov_up(self) -> float:
        return math.radians(self.fov_up_deg)

    @property
    def fov_down(self) -> float:
        return math.radians(self.fov_down_deg)

    @property
    def seed(self) -> StructuringElement:
        return StructuringElement.rect(self.closing_rows, self.closing_cols)


@dataclass(frozen=True, eq=False)
class RangeImage:
    """Per-pixel minimum range plus the pixel each source point landed in.

    ``pixel_of_point`` holds a flat pixel index (row * cols + col) per source
    point, or -1 for points outside the vertical field of view.
    """

    rows: int
    cols: int
    fov_up: float
    fov_down: float
    depth: np.ndarray
    filled: np.ndarray
    pixel_of_point: np.ndarray
    ranges: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        return np.isfinite(self.depth)

    @property
    def dropped_count(self) -> int:
        return int(np.count_nonzero(self.pixel_of_point < 0))

    def point_indices(self, row: int, col: int) -> np.ndarray:
        return np.flatnonzero(self.pixel_of_point == row * self.cols + col)

    def point_depth(self) -> np.ndarray:
        """Image depth at each point's pixel (inf for dropped points)."""
        out = np.full(len(self.pixel_of_point), np.inf)
        ok = self.pixel_of_point >= 0
        out[ok] = self.depth.ravel()[self.pixel_of_point[ok]]
        return out


def _xyz(scan) -> np.ndarray:
    if isinstance(scan, LidarScan):
        return scan.xyz
    return np.asarray(scan, dtype=np.float64).reshape(-1, np.shape(scan)[-1])[:, :3]


def project(scan, rows: int = 64, cols: int = 2048, fov_up: float = math.radians(2.0),
            fov_down: float = math.radians(-24.8)) -> RangeImage:
    """Spherical projection of a scan (angles in radians).

    Column from azimuth atan2(y, x) over [-pi, pi), row from elevation
    asin(z / range) measured down from ``fov_up``. Points outside the vertical
    field of view (or at zero range) are dropped.
    """
    if rows < 1 or cols < 1 or not fov_up > fov_down:
        raise ValueError("invalid range image geometry")
    xyz = _xyz(scan)
    r = np.linalg.norm(xyz, axis=1)
    pix = np.full(len(xyz), -1, dtype=np.int64)
    depth = np.full((rows, cols), np.inf)
    ok = r > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        elev = np.where(ok, np.arcsin(np.clip(xyz[:, 2] / np.where(ok, r, 1.0), -1.0, 1.0)), 0.0)
    ok &= (elev <= fov_up) & (elev >= fov_down)
    az = np.arctan2(xyz[ok, 1], xyz[ok, 0])
    col = np.floor(cols * (az + math.pi) / (2 * math.pi)).astype(np.int64)
    row = np.floor(rows * (fov_up - elev[ok]) / (fov_up - fov_down)).astype(np.int64)
    col = np.clip(col, 0, cols - 1)
    row = np.clip(row, 0, rows - 1)
    flat = row * cols + col
    pix[ok] = flat
    np.minimum.at(depth.ravel(), flat, r[ok])
    return RangeImage(rows, cols, fov_up, fov_down, depth, np.zeros((rows, cols), bool), pix, r)


def project_with(scan, params: SphericalParams) -> RangeImage:
    return project(scan, params.rows, params.cols, params.fov_up, params.fov_down)


def close_range_image(img: RangeImage, seed: StructuringElement = CLOSING_SEED) -> RangeImage:
    """Close the occupancy mask; new pixels get the mean finite depth of their window.

    Columns wrap around (the image spans 360 degrees of azimuth).
    """
    occ = img.occupied
    closed = morphology.close(occ, seed, wrap_cols=True)
    new = closed & ~occ
    if not new.any():
        return img
    mean = morphology.neighborhood_mean(img.depth, occ, seed, wrap_cols=True)
    depth = img.depth.copy()
    depth[new] = mean[new]
    return RangeImage(img.rows, img.cols, img.fov_up, img.fov_down, depth, img.filled | new,
                      img.pixel_of_point, img.ranges)


@dataclass
class OcclusionResult:
    success: bool
    augmented: LidarScan
    added_count: int
    removed_count: int
    added_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))    # into the object
    removed_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))  # into the scene


def closed_projection(scan, params: SphericalParams) -> RangeImage:
    return close_range_image(project_with(scan, params), params.seed)


def resolve_occlusion(scene: LidarScan, obj, params: SphericalParams = SphericalParams(),
                      min_points: Optional[int] = None,
                      scene_image: Optional[RangeImage] = None) -> OcclusionResult:
    """Paste an already-placed object into ``scene`` with per-pixel visibility.

    Scene and object are projected and closed separately. In every pixel where
    the object is strictly nearer than the scene, scene points farther than the
    object's pixel depth are removed and the object's real points in that
    pixel are added. The insertion succeeds when more than ``min_points``
    points were added; on failure the scene is returned untouched.

    ``obj`` is an :class:`InsertableObject` or a labeled :class:`LidarScan`
    (then ``min_points`` is required). ``scene_image`` may carry a cached
    closed projection of ``scene``.
    """
    if isinstance(obj, InsertableObject):
        obj_scan = obj.points
        if min_points is None:
            min_points = obj.min_points
    else:
        obj_scan = obj
        if min_points is None:
            raise ValueError("min_points is required for a bare point set")
    scene = scene.with_labels()
    obj_scan = obj_scan.with_labels()
    if scene_image is None:
        scene_image = closed_projection(scene, params)
    obj_image = closed_projection(obj_scan, params)

    wins = obj_image.depth < scene_image.depth  # strict: ties keep the scene
    obj_pix = obj_image.pixel_of_point
    flat_wins = wins.ravel()
    obj_depth = obj_image.depth.ravel()

    in_fov = obj_pix >= 0
    added = np.flatnonzero(in_fov & flat_wins[np.where(in_fov, obj_pix, 0)])

    sp = scene_image.pixel_of_point
    s_ok = sp >= 0
    s_pix = np.where(s_ok, sp, 0)
    remove_mask = s_ok & flat_wins[s_pix] & (scene_image.ranges > obj_depth[s_pix])
    removed = np.flatnonzero(remove_mask)

    success = len(added) > min_points
    if not success:
        return OcclusionResult(False, scene, len(added), 0, added, np.zeros(0, np.int64))
    kept = scene.subset(~remove_mask)
    augmented = LidarScan.concatenate([kept, obj_scan.subset(added)], frame_id=scene.frame_id)
    return OcclusionResult(True, augmented, len(added), len(removed), added, removed)


@dataclass
class ViolationReport:
    pixels: list  # (row, col, kind)

    @property
    def count(self) -> int:
        return len(self.pixels)


def depth_order_violations(scan: LidarScan, inserted: np.ndarray, groups: Optional[np.ndarray] = None,
                           params: SphericalParams = SphericalParams()) -> ViolationReport:
    """Find pixels where an inserted point and a point of another group disagree in depth.

    ``inserted`` marks pasted points; ``groups`` (default: instance ids) tells
    pasted objects apart. Kinds: ``"occluded_visible"`` when the other point is
    behind the pasted one, ``"hidden_inserted"`` when it is in front.
    """
    inserted = np.asarray(inserted, dtype=bool)
    if groups is None:
        groups = scan.instances if scan.instances is not None else np.zeros(len(scan), np.int64)
    grp = np.where(inserted, np.asarray(groups, dtype=np.int64), -1)
    img = project_with(scan, params)
    pix = img.pixel_of_point
    candidates = np.unique(pix[inserted & (pix >= 0)])
    found = []
    if len(candidates) == 0:
        return ViolationReport(found)
    order = np.argsort(pix, kind="stable")
    sorted_pix = pix[order]
    for p in candidates:
        lo, hi = np.searchsorted(sorted_pix, [p, p + 1])
        idx = order[lo:hi]
        g = grp[idx]
        if len(np.unique(g)) < 2:
            continue
        rng = img.ranges[idx]
        ins = inserted[idx]
        kinds = set()
        for a in np.flatnonzero(ins):
            other = g != g[a]
            if np.any(rng[other] > rng[a]):
                kinds.add("occluded_visible")
            if np.any(rng[other] < rng[a]):
                kinds.add("hidden_inserted")
        row, col = divmod(int(p), img.cols)
        for k in sorted(kinds):
            found.append((row, col, k))
    return ViolationReport(found)


def depth_to_pgm(img: RangeImage, path) -> None:
    """Grayscale depth map: near bright, far dark, empty black."""
    d = img.depth
    fin = np.isfinite(d)
    out = np.zeros(d.shape, np.uint8)
    if fin.any():
        lo, hi = d[fin].min(), d[fin].max()
        span = hi - lo if hi > lo else 1.0
        out[fin] = np.round(1 + 254 * (hi - d[fin]) / span).astype(np.uint8)
    write_pgm(out, path)
