"""Independent reference implementations used only by the tests.

Each oracle avoids the code path it checks: brute-force hulls, per-edge
rectangle enumeration, sampling-based overlap, scipy morphology, per-pixel
loops for the range-image logic, and a post-hoc placement validator built on
shapely.
"""
from __future__ import annotations

import math

import numba
import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon


# -- geometry --------------------------------------------------------------------

@numba.njit(cache=True)
def _strictly_or_on_triangle(px, py, ax, ay, bx, by, cx, cy):
    d1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    d2 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
    d3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
    neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (neg and pos)


@numba.njit(cache=True)
def _hull_flags(pts):
    n = pts.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    for p in range(n):
        px, py = pts[p, 0], pts[p, 1]
        done = False
        for a in range(n):
            if a == p or done:
                continue
            for b in range(a + 1, n):
                if b == p or done:
                    continue
                for c in range(b + 1, n):
                    if c == p:
                        continue
                    ax, ay, bx, by, cx, cy = pts[a, 0], pts[a, 1], pts[b, 0], pts[b, 1], pts[c, 0], pts[c, 1]
                    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
                    if area == 0.0:
                        continue
                    if _strictly_or_on_triangle(px, py, ax, ay, bx, by, cx, cy):
                        keep[p] = False
                        done = True
                        break
    return keep


def brute_hull_vertices(points) -> np.ndarray:
    """Hull vertex set by the O(n^4) rule: a point is a vertex iff no triangle of
    three other points contains it. Assumes no duplicates or collinear triples
    (true almost surely for continuous random input). Returned CCW around the centroid."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if len(pts) <= 2:
        return pts.copy()
    v = pts[_hull_flags(pts)]
    c = v.mean(axis=0)
    order = np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))
    return v[order]


def per_edge_min_area(points, hull_vertices) -> float:
    """Minimum over hull-edge directions of the bounding-box area in that rotated frame."""
    pts = np.asarray(points, dtype=np.float64)
    best = math.inf
    n = len(hull_vertices)
    for i in range(n):
        d = hull_vertices[(i + 1) % n] - hull_vertices[i]
        ang = math.atan2(d[1], d[0])
        c, s = math.cos(-ang), math.sin(-ang)
        rx = pts[:, 0] * c - pts[:, 1] * s
        ry = pts[:, 0] * s + pts[:, 1] * c
        best = min(best, float((rx.max() - rx.min()) * (ry.max() - ry.min())))
    return best


def rect_corners(center, length, width, yaw) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=np.float64)


def _inside_closed(pts, center, length, width, yaw) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    d = pts - np.asarray(center)
    u = d[:, 0] * c + d[:, 1] * s
    v = -d[:, 0] * s + d[:, 1] * c
    return (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)


def _rect_samples(center, length, width, yaw, per_edge: int, grid: int) -> np.ndarray:
    corners = rect_corners(center, length, width, yaw)
    t = np.linspace(0.0, 1.0, per_edge)[:, None]
    edges = [corners[i] + t * (corners[(i + 1) % 4] - corners[i]) for i in range(4)]
    g = np.linspace(-0.5, 0.5, grid)
    uu, vv = np.meshgrid(g * length, g * width)
    c, s = math.cos(yaw), math.sin(yaw)
    interior = np.column_stack([uu.ravel() * c - vv.ravel() * s, uu.ravel() * s + vv.ravel() * c]) + center
    return np.vstack(edges + [interior, corners])


def sampled_overlap(a: tuple, b: tuple, per_edge: int = 4000, grid: int = 40) -> bool:
    """Rects as (center, length, width, yaw): sample each boundary and interior
    densely and test membership in the other closed rect."""
    sa = _rect_samples(*a, per_edge, grid)
    if _inside_closed(sa, *b).any():
        return True
    sb = _rect_samples(*b, per_edge, grid)
    return bool(_inside_closed(sb, *a).any())


def shapely_rect(center, length, width, yaw) -> Polygon:
    return Polygon(rect_corners(center, length, width, yaw))


def box_polygon(box) -> Polygon:
    return shapely_rect((box.cx, box.cy), box.l, box.w, box.yaw)


# -- morphology ---------------------------------------------------------------------

def disk_array(r: int) -> np.ndarray:
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def scipy_close(mask, struct) -> np.ndarray:
    d = ndimage.binary_dilation(mask, structure=struct, border_value=0)
    return ndimage.binary_erosion(d, structure=struct, border_value=1)


def loop_close(mask, r: int) -> np.ndarray:
    """Dilate then erode by explicit disk offsets, pixel by pixel."""
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    offs = [(i, j) for i in range(-r, r + 1) for j in range(-r, r + 1) if i * i + j * j <= r * r]
    dil = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            dil[y, x] = any(0 <= y + i < h and 0 <= x + j < w and mask[y + i, x + j] for i, j in offs)
    ero = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            ero[y, x] = all(not (0 <= y + i < h and 0 <= x + j < w) or dil[y + i, x + j] for i, j in offs)
    return ero


# -- range image ----------------------------------------------------------------------

def pixel_of(x, y, z, rows, cols, fov_up, fov_down):
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0:
        return None
    elev = math.asin(max(-1.0, min(1.0, z / r)))
    if elev > fov_up or elev < fov_down:
        return None
    col = int(math.floor(cols * (math.atan2(y, x) + math.pi) / (2 * math.pi)))
    row = int(math.floor(rows * (fov_up - elev) / (fov_up - fov_down)))
    return min(max(row, 0), rows - 1), min(max(col, 0), cols - 1), r


def brute_closed_depth(xyz, rows, cols, fov_up, fov_down, half_r=2, half_c=1):
    """Per-pixel min range, then a rows x cols closing with column wrap where
    newly filled pixels take the mean depth of occupied window pixels."""
    depth = {}
    pix = []
    for x, y, z in xyz:
        p = pixel_of(x, y, z, rows, cols, fov_up, fov_down)
        pix.append(p)
        if p is not None:
            key = (p[0], p[1])
            depth[key] = min(depth.get(key, math.inf), p[2])

    def window(r, c):
        for dr in range(-half_r, half_r + 1):
            for dc in range(-half_c, half_c + 1):
                yield r + dr, (c + dc) % cols

    dil = set()
    for r in range(rows):
        for c in range(cols):
            if any(0 <= rr < rows and (rr, cc) in depth for rr, cc in window(r, c)):
                dil.add((r, c))
    closed = dict(depth)
    for r in range(rows):
        for c in range(cols):
            if (r, c) in depth:
                continue
            # erosion: every in-grid window pixel must be dilated
            if all(not (0 <= rr < rows) or (rr, cc) in dil for rr, cc in window(r, c)):
                vals = [depth[(rr, cc)] for rr, cc in window(r, c) if (rr, cc) in depth]
                closed[(r, c)] = sum(vals) / len(vals)
    return closed, pix


def brute_occlusion(scene_xyz, obj_xyz, rows, cols, fov_up, fov_down):
    """(added object indices, removed scene indices) by per-pixel comparison."""
    sd, spix = brute_closed_depth(scene_xyz, rows, cols, fov_up, fov_down)
    od, opix = brute_closed_depth(obj_xyz, rows, cols, fov_up, fov_down)
    wins = {k for k, d in od.items() if d < sd.get(k, math.inf)}
    added = [i for i, p in enumerate(opix) if p is not None and (p[0], p[1]) in wins]
    removed = [i for i, p in enumerate(spix)
               if p is not None and (p[0], p[1]) in wins and p[2] > od[(p[0], p[1])]]
    return sorted(added), sorted(removed)


# -- placement validator ---------------------------------------------------------------

# minimum inserted point counts per class id, written out independently of the class table
TABLE_MIN_POINTS = {11: 10, 15: 10, 18: 40, 30: 20, 31: 30, 32: 30}
PEDESTRIAN_CLASSES = {30}


def validate_insertions(result, scene_boxes, bank, grid, tolerance=0.5, step=0.05):
    """Check committed insertions against the placement contract.

    Returns a list of human-readable problems (empty when everything holds).
    """
    problems = []
    n_orig = len(scene_boxes)
    boxes = list(result.boxes)
    inst = result.scan.instances
    s = grid.spec
    for k, rec in enumerate(result.report.insertions):
        box = boxes[n_orig + k]
        surface = grid.pedestrian if rec.class_id in PEDESTRIAN_CLASSES else grid.road
        # surface: dense samples strictly inside the footprint, plus the center
        poly = box_polygon(box)
        g_u = np.arange(-box.l / 2 + 1e-6, box.l / 2, step)
        g_v = np.arange(-box.w / 2 + 1e-6, box.w / 2, step)
        uu, vv = np.meshgrid(np.append(g_u, box.l / 2 - 1e-6), np.append(g_v, box.w / 2 - 1e-6))
        c, sn = math.cos(box.yaw), math.sin(box.yaw)
        px = box.cx + uu.ravel() * c - vv.ravel() * sn
        py = box.cy + uu.ravel() * sn + vv.ravel() * c
        px, py = np.append(px, box.cx), np.append(py, box.cy)
        ix = np.floor((px - s.origin_x) / s.cell_size).astype(int)
        iy = np.floor((py - s.origin_y) / s.cell_size).astype(int)
        if (ix < 0).any() or (iy < 0).any() or (ix >= s.width).any() or (iy >= s.height).any():
            problems.append(f"{rec.instance_id}: footprint leaves the map")
            continue
        if not surface[ix, iy].all():
            problems.append(f"{rec.instance_id}: footprint covers a cell of the wrong surface")
        if not np.isfinite(grid.elevation[ix, iy]).all():
            problems.append(f"{rec.instance_id}: footprint covers a cell without elevation")
        # no overlap with any other box (touching counts)
        for j, other in enumerate(boxes):
            if j != n_orig + k and poly.intersects(box_polygon(other)):
                problems.append(f"{rec.instance_id}: overlaps box {j}")
        # point threshold
        n_pts = int(np.count_nonzero(inst == rec.instance_id))
        if n_pts <= TABLE_MIN_POINTS[rec.class_id]:
            problems.append(f"{rec.instance_id}: only {n_pts} points")
        # range preserved
        src = bank[rec.bank_index].box
        if abs(math.hypot(box.cx, box.cy) - math.hypot(src.cx, src.cy)) > tolerance:
            problems.append(f"{rec.instance_id}: range changed")
    return problems

