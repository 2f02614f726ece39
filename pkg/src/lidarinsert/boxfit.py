"""Oriented boxes from instance point sets, and per-class size refinement."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import EmptyInput, InsufficientData, MalformedFile
from .geometry import convex_hull, min_area_rect
from .model import OrientedBox

DECILE = 10.0
MIN_SAMPLES = 10


@dataclass(frozen=True)
class ClassDimStats:
    class_id: int
    min_dims: tuple  # (l, w, h), lowest decile
    max_dims: tuple  # (l, w, h), observed maximum

    def __post_init__(self):
        lo, hi = tuple(map(float, self.min_dims)), tuple(map(float, self.max_dims))
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("dims must be (l, w, h)")
        if not all(0 < a <= b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid dimension range {lo} .. {hi}")
        object.__setattr__(self, "min_dims", lo)
        object.__setattr__(self, "max_dims", hi)


def fit_box(points, ground_elevation: Optional[float] = None) -> OrientedBox:
    """Fit an oriented box to an object's points.

    The footprint comes from the minimum-area rectangle around the convex
    hull of the ground-plane projection; height is the z-extent. With a
    ground elevation the box is seated on it, otherwise centered on the
    z-extent. A single point yields a zero-size box.

    Raises:
        EmptyInput: if there are no points.
    """
    xyz = np.asarray(points, dtype=np.float64)
    xyz = xyz.reshape(-1, xyz.shape[-1])[:, :3] if xyz.size else xyz.reshape(0, 3)
    if len(xyz) == 0:
        raise EmptyInput("cannot fit a box to zero points")
    rect = min_area_rect(convex_hull(xyz[:, :2]))
    zmin, zmax = float(xyz[:, 2].min()), float(xyz[:, 2].max())
    h = zmax - zmin
    if ground_elevation is None:
        cz = (zmax + zmin) / 2.0
    else:
        # seated on the ground; ground above the lowest point just lifts the bottom
        cz = float(ground_elevation) + h / 2.0
    return OrientedBox(rect.center[0], rect.center[1], cz, rect.length, rect.width, h, rect.yaw)


def lowest_decile(values) -> float:
    """10th percentile with linear interpolation at fractional index p * (n - 1)."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), DECILE, method="linear"))


def compute_class_stats(boxes: Iterable, min_samples: int = MIN_SAMPLES) -> dict[int, ClassDimStats]:
    """Per-class dimension bounds from ``(class_id, l, w, h)`` tuples.

    Raises:
        InsufficientData: listing every class with fewer than ``min_samples`` boxes.
    """
    by_class: dict[int, list] = defaultdict(list)
    for cls, l, w, h in boxes:
        by_class[int(cls)].append((float(l), float(w), float(h)))
    short = sorted(c for c, v in by_class.items() if len(v) < min_samples)
    if short:
        raise InsufficientData(
            "fewer than %d boxes for class(es) %s" % (min_samples, ", ".join(map(str, short))), short)
    stats = {}
    for cls in sorted(by_class):
        dims = np.array(by_class[cls])
        lo = tuple(lowest_decile(dims[:, k]) for k in range(3))
        hi = tuple(float(dims[:, k].max()) for k in range(3))
        stats[cls] = ClassDimStats(cls, lo, hi)
    return stats


def refine_box(box: OrientedBox, stats: Optional[ClassDimStats]) -> OrientedBox:
    """Clamp dimensions into the class range, keeping center x/y, yaw and bottom height.

    Without stats the box is returned unchanged.
    """
    if stats is None:
        return box
    l, w, h = (min(max(v, lo), hi) for v, lo, hi in
               zip((box.l, box.w, box.h), stats.min_dims, stats.max_dims))
    bottom = box.cz - box.h / 2.0
    return box.replace(l=l, w=w, h=h, cz=bottom + h / 2.0)


def write_stats(stats: Mapping[int, ClassDimStats], path, names: Optional[Mapping[int, str]] = None) -> None:
    """One line per class: ``<id> <name> min <l> <w> <h> max <l> <w> <h>``."""
    lines = ["# class_id name min l w h max l w h"]
    for cid in sorted(stats):
        s = stats[cid]
        name = (names or {}).get(cid, str(cid))
        lines.append("%d %s min %s max %s" % (
            cid, name, " ".join(repr(v) for v in s.min_dims), " ".join(repr(v) for v in s.max_dims)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats(path) -> dict[int, ClassDimStats]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 10 or tok[2] != "min" or tok[6] != "max":
            raise MalformedFile(f"{path}:{lineno}: expected '<id> <name> min l w h max l w h'")
        try:
            cid = int(tok[0])
            lo = tuple(float(t) for t in tok[3:6])
            hi = tuple(float(t) for t in tok[7:10])
            out[cid] = ClassDimStats(cid, lo, hi)
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
    return out


def yaw_diff_mod(a: float, b: float, period: float = math.pi / 2) -> float:
    """Smallest absolute difference between two angles modulo ``period``."""
    d = (a - b) % period
    return min(d, period - d)
