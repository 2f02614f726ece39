"""2D geometry for box fitting and collision tests.

Convex hull (monotone chain), minimum-area enclosing rectangle (rotating
calipers) and the separating-axis overlap test for oriented rectangles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput
from .model import OrientedBox


@dataclass(frozen=True, eq=False)
class Hull2D:
    """Convex polygon, vertices counter-clockwise without collinear triples."""

    vertices: np.ndarray

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def area(self) -> float:
        if len(self.vertices) < 3:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> Hull2D:
    """Convex hull of 2D points.

    Duplicates, interior points and points on hull edges are dropped. A single
    distinct point gives a 1-vertex hull, collinear input a 2-vertex hull.

    Raises:
        EmptyInput: if ``points`` is empty.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyInput("convex hull of zero points")
    pts = np.unique(pts, axis=0)  # sorted lexicographically by x, then y
    if len(pts) <= 2:
        return Hull2D(pts.copy())

    lst = [tuple(p) for p in pts]
    lower: list = []
    for p in lst:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(lst):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return Hull2D(np.array(hull, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class FitRect:
    """Oriented rectangle, canonicalized so that length >= width and yaw in [-pi/2, pi/2)."""

    center: np.ndarray
    length: float
    width: float
    yaw: float = 0.0

    def __post_init__(self):
        length, width, yaw = float(self.length), float(self.width), float(self.yaw)
        if width > length:
            length, width, yaw = width, length, yaw + math.pi / 2
        yaw = (yaw + math.pi / 2) % math.pi - math.pi / 2
        if yaw >= math.pi / 2:
            yaw -= math.pi
        object.__setattr__(self, "center", np.array(self.center, dtype=np.float64).reshape(2))
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "yaw", yaw)

    @property
    def area(self) -> float:
        return self.length * self.width

    @property
    def axes(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        """(4, 2) corners, counter-clockwise."""
        hl, hw = self.length / 2, self.width / 2
        u, v = self.axes
        return np.array([
            self.center + hl * u - hw * v,
            self.center + hl * u + hw * v,
            self.center - hl * u + hw * v,
            self.center - hl * u - hw * v,
        ])

    @classmethod
    def from_box(cls, box: OrientedBox) -> "FitRect":
        return cls((box.cx, box.cy), box.l, box.w, box.yaw)


def min_area_rect(hull) -> FitRect:
    """Smallest-area rectangle with one side flush to a hull edge.

    Rotating calipers over every edge of the closed hull. Degenerate hulls
    (one point, or a segment) give a zero-width rectangle along the segment.
    ``hull`` may also be a raw point array, in which case it is hulled first.
    """
    if not isinstance(hull, Hull2D):
        hull = convex_hull(hull)
    v = hull.vertices
    n = len(v)
    if n == 0:
        raise EmptyInput("empty hull")
    if n == 1:
        return FitRect(v[0], 0.0, 0.0, 0.0)
    if n == 2:
        d = v[1] - v[0]
        return FitRect((v[0] + v[1]) / 2, float(np.hypot(*d)), 0.0, math.atan2(d[1], d[0]))

    def proj(idx, direction):
        return v[idx % n, 0] * direction[0] + v[idx % n, 1] * direction[1]

    best = None
    j = k = m = None
    for i in range(n):
        d = v[(i + 1) % n] - v[i]
        e = d / math.hypot(d[0], d[1])
        nrm = np.array([-e[1], e[0]])  # points into the hull (CCW)
        if j is None:
            pe = v @ e
            pn = v @ nrm
            j = int(np.argmax(pe))
            k = int(np.argmax(pn))
            m = int(np.argmin(pe))
        else:
            for _ in range(n):
                if proj(j + 1, e) >= proj(j, e):
                    j = (j + 1) % n
                else:
                    break
            for _ in range(n):
                if proj(k + 1, nrm) >= proj(k, nrm):
                    k = (k + 1) % n
                else:
                    break
            for _ in range(n):
                if proj(m + 1, e) <= proj(m, e):
                    m = (m + 1) % n
                else:
                    break
        base_e = proj(i, e)
        base_n = proj(i, nrm)
        hi_e = proj(j, e) - base_e
        lo_e = proj(m, e) - base_e
        height = proj(k, nrm) - base_n
        span = hi_e - lo_e
        area = span * height
        if best is None or area < best[0]:
            center = v[i] + e * (hi_e + lo_e) / 2 + nrm * height / 2
            best = (area, center, span, height, math.atan2(e[1], e[0]))
    _, center, span, height, yaw = best
    return FitRect(center, span, height, yaw)


def rects_overlap(a: FitRect, b: FitRect) -> bool:
    """Separating-axis test for two closed rectangles; touching counts as overlap."""
    ca, cb = a.corners(), b.corners()
    for axis in np.vstack([a.axes, b.axes]):
        pa = ca @ axis
        pb = cb @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def boxes_overlap_bev(a: OrientedBox, b: OrientedBox) -> bool:
    """Footprint overlap of two 3D boxes seen from above."""
    return rects_overlap(FitRect.from_box(a), FitRect.from_box(b))
