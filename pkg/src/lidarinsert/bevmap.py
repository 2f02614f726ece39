"""Bird's-eye-view placement map.

Labeled ground points are binned into a 2D grid of square cells. The road
mask is closed morphologically, and a pedestrian area is derived as a
dilated band along the road border. Each cell keeps the mean measured ground
elevation so inserted objects can be seated on the surface.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import morphology
from .errors import LengthMismatch, MalformedFile, MissingLabels, OutOfBounds
from .model import ROAD_CLASS_IDS, SIDEWALK_CLASS_IDS, LidarScan, Pose, SurfaceKind, transform_scan
from .morphology import StructuringElement

ROAD_SEED = StructuringElement.disk(3)
PEDESTRIAN_SEED = StructuringElement.disk(2)
PEDESTRIAN_BORDER = 2
CELL_SIZE = 1.0


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    width: int   # cells along x
    height: int  # cells along y

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.width < 0 or self.height < 0:
            raise ValueError("grid size must be non-negative")

    @classmethod
    def fit(cls, xy: np.ndarray, cell_size: float = CELL_SIZE, pad_cells: int = 0) -> "GridSpec":
        """Smallest cell-aligned grid covering ``xy`` plus ``pad_cells`` on each side."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        if len(xy) == 0:
            return cls(0.0, 0.0, cell_size, 0, 0)
        lo = np.floor(xy.min(axis=0) / cell_size).astype(np.int64) - pad_cells
        hi = np.floor(xy.max(axis=0) / cell_size).astype(np.int64) + pad_cells
        return cls(float(lo[0] * cell_size), float(lo[1] * cell_size), cell_size,
                   int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1))

    def index(self, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell indices of points plus a mask of points that fall inside the grid.

        Cells are half-open: [k * cell, (k + 1) * cell).
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.origin_x) / self.cell_size).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.origin_y) / self.cell_size).astype(np.int64)
        ok = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        return ix, iy, ok

    def cell_center(self, ix, iy) -> tuple:
        return (self.origin_x + (np.asarray(ix) + 0.5) * self.cell_size,
                self.origin_y + (np.asarray(iy) + 0.5) * self.cell_size)


@dataclass(frozen=True)
class CellRecord:
    ix: int
    iy: int
    road: bool
    pedestrian: bool
    elevation: Optional[float]
    hit_count: int


@dataclass(frozen=True, eq=False)
class BevGrid:
    """Placement grid. Arrays are indexed ``[ix, iy]``.

    ``elev_sum``/``hit_count`` hold the raw ground measurements; ``elevation``
    is the usable surface height (measured or interpolated, NaN if unknown).
    ``sidewalk`` keeps the raw sidewalk-labeled cells.
    """

    spec: GridSpec
    road: np.ndarray
    pedestrian: np.ndarray
    sidewalk: np.ndarray
    elevation: np.ndarray
    elev_sum: np.ndarray
    hit_count: np.ndarray
    finalized: bool = False

    @classmethod
    def empty(cls, spec: GridSpec) -> "BevGrid":
        shape = (spec.width, spec.height)
        return cls(spec, np.zeros(shape, bool), np.zeros(shape, bool), np.zeros(shape, bool),
                   np.full(shape, np.nan), np.zeros(shape), np.zeros(shape, np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spec.width, self.spec.height)

    @property
    def measured_elevation(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.hit_count > 0, self.elev_sum / np.maximum(self.hit_count, 1), np.nan)

    def surface_mask(self, kind: SurfaceKind) -> np.ndarray:
        return self.road if kind is SurfaceKind.ROAD else self.pedestrian

    def placeable_mask(self, kind: SurfaceKind) -> np.ndarray:
        """Cells carrying the surface flag and a known elevation."""
        return self.surface_mask(kind) & np.isfinite(self.elevation)

    def cell_at(self, x: float, y: float) -> CellRecord:
        """Cell containing (x, y).

        Raises:
            OutOfBounds: if the location is outside the grid.
        """
        ix, iy, ok = self.spec.index([[x, y]])
        if not ok[0]:
            raise OutOfBounds(f"({x}, {y}) lies outside the map")
        i, j = int(ix[0]), int(iy[0])
        elev = self.elevation[i, j]
        return CellRecord(i, j, bool(self.road[i, j]), bool(self.pedestrian[i, j]),
                          None if np.isnan(elev) else float(elev), int(self.hit_count[i, j]))

    def merge(self, other: "BevGrid") -> "BevGrid":
        """Union of flags and pooled elevation measurements on a shared spec."""
        if other.spec != self.spec:
            raise ValueError("grids must share a spec to be merged")
        elev_sum = self.elev_sum + other.elev_sum
        hits = self.hit_count + other.hit_count
        g = replace(self, road=self.road | other.road, sidewalk=self.sidewalk | other.sidewalk,
                    pedestrian=self.pedestrian | other.pedestrian,
                    elev_sum=elev_sum, hit_count=hits, finalized=False)
        return replace(g, elevation=g.measured_elevation)

    def masks_equal(self, other: "BevGrid") -> bool:
        return (self.spec == other.spec and np.array_equal(self.road, other.road)
                and np.array_equal(self.pedestrian, other.pedestrian))

    def save(self, path) -> None:
        s = self.spec
        with open(path, "wb") as fh:
            np.savez(fh, spec=np.array([s.origin_x, s.origin_y, s.cell_size, s.width, s.height]),
                     road=self.road, pedestrian=self.pedestrian, sidewalk=self.sidewalk,
                     elevation=self.elevation, elev_sum=self.elev_sum, hit_count=self.hit_count,
                     finalized=np.array(self.finalized))

    @classmethod
    def load(cls, path) -> "BevGrid":
        with np.load(path) as z:
            sp = z["spec"]
            spec = GridSpec(float(sp[0]), float(sp[1]), float(sp[2]), int(sp[3]), int(sp[4]))
            return cls(spec, z["road"], z["pedestrian"], z["sidewalk"], z["elevation"],
                       z["elev_sum"], z["hit_count"], bool(z["finalized"]))


def default_pad(road_seed=ROAD_SEED, pedestrian_seed=PEDESTRIAN_SEED,
                border_dist: int = PEDESTRIAN_BORDER) -> int:
    return max(road_seed.reach, border_dist + pedestrian_seed.reach)


def rasterize(scan: LidarScan, road_class_ids: Iterable[int] = ROAD_CLASS_IDS,
              sidewalk_class_ids: Iterable[int] = SIDEWALK_CLASS_IDS,
              grid_spec: Optional[GridSpec] = None, cell_size: float = CELL_SIZE,
              pad_cells: Optional[int] = None) -> BevGrid:
    """Bin road and sidewalk points into a grid.

    Both road and sidewalk points contribute to the cell's mean elevation;
    other labels are ignored. Without ``grid_spec`` the grid is fitted to the
    scan extent, padded by the largest morphology reach.

    Raises:
        MissingLabels: if the scan has no label channel.
    """
    if scan.labels is None:
        raise MissingLabels(f"scan {scan.frame_id!r} has no semantic labels")
    if grid_spec is None:
        pad = default_pad() if pad_cells is None else pad_cells
        grid_spec = GridSpec.fit(scan.xyz[:, :2], cell_size, pad)
    grid = BevGrid.empty(grid_spec)
    road_sel = np.isin(scan.labels, list(road_class_ids))
    side_sel = np.isin(scan.labels, list(sidewalk_class_ids))
    ground = road_sel | side_sel
    ix, iy, ok = grid_spec.index(scan.xyz[:, :2])
    keep = ground & ok
    np.add.at(grid.elev_sum, (ix[keep], iy[keep]), scan.xyz[keep, 2])
    np.add.at(grid.hit_count, (ix[keep], iy[keep]), 1)
    grid.road[ix[road_sel & ok], iy[road_sel & ok]] = True
    grid.sidewalk[ix[side_sel & ok], iy[side_sel & ok]] = True
    grid.pedestrian[...] = grid.sidewalk
    grid.elevation[...] = grid.measured_elevation
    return grid


def accumulate(scans: Sequence[LidarScan], poses: Sequence[Pose],
               road_class_ids: Iterable[int] = ROAD_CLASS_IDS,
               sidewalk_class_ids: Iterable[int] = SIDEWALK_CLASS_IDS,
               grid_spec: Optional[GridSpec] = None, cell_size: float = CELL_SIZE,
               pad_cells: Optional[int] = None) -> BevGrid:
    """Rasterize several scans into one grid in the frame the poses map into.

    Raises:
        LengthMismatch: if the number of poses differs from the number of scans.
    """
    if len(scans) != len(poses):
        raise LengthMismatch(f"{len(poses)} poses for {len(scans)} scans")
    for s in scans:
        if s.labels is None:
            raise MissingLabels(f"scan {s.frame_id!r} has no semantic labels")
    moved = [transform_scan(s, p) for s, p in zip(scans, poses)]
    if grid_spec is None:
        pad = default_pad() if pad_cells is None else pad_cells
        allxy = np.concatenate([m.xyz[:, :2] for m in moved]) if moved else np.zeros((0, 2))
        grid_spec = GridSpec.fit(allxy, cell_size, pad)
    grid = BevGrid.empty(grid_spec)
    for m in moved:
        grid = grid.merge(rasterize(m, road_class_ids, sidewalk_class_ids, grid_spec))
    return grid


def close_road(grid: BevGrid, seed: StructuringElement = ROAD_SEED) -> BevGrid:
    """Morphologically close the road mask.

    Cells added by the closing get the mean measured elevation of the
    original road cells in their seed neighborhood, or stay unknown.
    """
    closed = morphology.close(grid.road, seed)
    new = closed & ~grid.road
    measured = grid.measured_elevation
    known_road = grid.road & np.isfinite(measured)
    interp = morphology.neighborhood_mean(measured, known_road, seed)
    elevation = grid.elevation.copy()
    fill = new & np.isnan(elevation)
    elevation[fill] = interp[fill]
    return replace(grid, road=closed, elevation=elevation)


def derive_pedestrian_area(grid: BevGrid, border_dist: int = PEDESTRIAN_BORDER,
                           seed: StructuringElement = PEDESTRIAN_SEED) -> BevGrid:
    """Pedestrian area along the road border.

    Non-road cells within ``border_dist`` (Chebyshev) of a road cell are
    dilated by ``seed``; raw sidewalk cells are added and road cells removed.
    Cells without elevation inherit it from the nearest road cell that has one.
    """
    road = grid.road
    square = StructuringElement.rect(2 * border_dist + 1, 2 * border_dist + 1)
    band = morphology.dilate(road, square) & ~road
    ped = (morphology.dilate(band, seed) | grid.sidewalk) & ~road

    elevation = grid.elevation.copy()
    source = road & np.isfinite(elevation)
    missing = ped & np.isnan(elevation)
    if missing.any() and source.any():
        _, (ni, nj) = ndimage.distance_transform_edt(~source, return_indices=True)
        elevation[missing] = elevation[ni[missing], nj[missing]]
    return replace(grid, pedestrian=ped, elevation=elevation, finalized=True)


def build_map(scan_or_grid, road_seed: StructuringElement = ROAD_SEED,
              border_dist: int = PEDESTRIAN_BORDER,
              pedestrian_seed: StructuringElement = PEDESTRIAN_SEED, **raster_kw) -> BevGrid:
    """Full map pipeline: rasterize (if given a scan), close the road, derive the pedestrian area."""
    if isinstance(scan_or_grid, BevGrid):
        grid = scan_or_grid
    else:
        raster_kw.setdefault("pad_cells", default_pad(road_seed, pedestrian_seed, border_dist))
        grid = rasterize(scan_or_grid, **raster_kw)
    return derive_pedestrian_area(close_road(grid, road_seed), border_dist, pedestrian_seed)


def footprint_cells(spec: GridSpec, corners: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Cells whose interior intersects the convex polygon ``corners``.

    Returns (ix, iy, inside) where ``inside`` is False if the polygon reaches
    beyond the grid.
    """
    corners = np.asarray(corners, dtype=np.float64)
    cs = spec.cell_size
    lo = np.floor((corners.min(axis=0) - (spec.origin_x, spec.origin_y)) / cs).astype(int)
    hi = np.floor((corners.max(axis=0) - (spec.origin_x, spec.origin_y)) / cs).astype(int)
    ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    # SAT between the polygon and each axis-aligned cell, counting only positive-area overlap
    x0 = spec.origin_x + ii * cs
    y0 = spec.origin_y + jj * cs
    eps = 1e-9
    hit = ~((corners[:, 0].max() <= x0 + eps) | (corners[:, 0].min() >= x0 + cs - eps)
            | (corners[:, 1].max() <= y0 + eps) | (corners[:, 1].min() >= y0 + cs - eps))
    cell_pts = np.stack([x0, y0, x0 + cs, y0, x0 + cs, y0 + cs, x0, y0 + cs], axis=1).reshape(-1, 4, 2)
    n = len(corners)
    for k in range(n):
        e = corners[(k + 1) % n] - corners[k]
        axis = np.array([-e[1], e[0]])
        norm = math.hypot(*axis)
        if norm == 0:
            continue
        axis /= norm
        poly = corners @ axis
        proj = cell_pts @ axis
        hit &= ~((proj.max(axis=1) <= poly.min() + eps) | (proj.min(axis=1) >= poly.max() - eps))
    ii, jj = ii[hit], jj[hit]
    inside = bool(np.all((ii >= 0) & (ii < spec.width) & (jj >= 0) & (jj < spec.height)))
    return ii, jj, inside


def to_pgm(grid: BevGrid, path) -> None:
    """Write the map as a binary 8-bit PGM: road white, pedestrian gray, rest black.

    Image rows run along -x (forward is up), columns along -y (left is left).
    """
    img = np.zeros(grid.shape, np.uint8)
    img[grid.pedestrian] = 128
    img[grid.road] = 255
    img = img[::-1, ::-1]
    write_pgm(img, path)


def write_pgm(img: np.ndarray, path) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (cols, rows))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise MalformedFile(f"{path}: not an 8-bit binary PGM")
    cols, rows = int(m.group(1)), int(m.group(2))
    pixels = data[m.end():]
    if len(pixels) != rows * cols:
        raise MalformedFile(f"{path}: PGM pixel payload has the wrong size")
    return np.frombuffer(pixels, np.uint8).reshape(rows, cols)
