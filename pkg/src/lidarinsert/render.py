"""Matplotlib figures for maps, range images and augmentation reports.

All figures are drawn with the Agg backend and saved without version metadata
so repeated runs produce identical files.
"""
from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .bevmap import BevGrid  # noqa: E402
from .model import LidarScan, OrientedBox, box_corners_bev  # noqa: E402
from .spherical import RangeImage  # noqa: E402

_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}
_MAP_CMAP = ListedColormap(["#202020", "#5a5a5a", "#4f8fd6", "#e0b040"])


def _finish(fig, path) -> None:
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _draw_boxes(ax, boxes: Sequence[OrientedBox], color: str, lw: float = 1.0) -> None:
    for b in boxes:
        c = box_corners_bev(b)
        c = np.vstack([c, c[:1]])
        ax.plot(c[:, 0], c[:, 1], color=color, lw=lw)


def plot_bev_map(grid: BevGrid, path, boxes: Sequence[OrientedBox] = (), title: str = "") -> None:
    """Road / pedestrian-area / sidewalk map in world axes, x to the right."""
    code = np.zeros(grid.shape, np.uint8)
    code[grid.sidewalk] = 1
    code[grid.pedestrian] = 3
    code[grid.road] = 2
    s = grid.spec
    extent = (s.origin_x, s.origin_x + s.width * s.cell_size,
              s.origin_y, s.origin_y + s.height * s.cell_size)
    aspect = s.height / max(s.width, 1)
    fig, ax = plt.subplots(figsize=(10, max(2.0, 10 * aspect + 0.8)))
    ax.imshow(code.T, origin="lower", extent=extent, cmap=_MAP_CMAP, vmin=0, vmax=3,
              interpolation="nearest")
    _draw_boxes(ax, boxes, "#d04040")
    ax.plot([0], [0], marker="^", color="white", ms=6)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title or "placement map (blue road, yellow pedestrian area)")
    fig.tight_layout()
    _finish(fig, path)


def plot_range_image(img: RangeImage, path, title: str = "") -> None:
    depth = np.where(np.isfinite(img.depth), img.depth, np.nan)
    fig, ax = plt.subplots(figsize=(12, 2.2))
    im = ax.imshow(depth, aspect="auto", cmap="viridis_r", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="range [m]", pad=0.01)
    ax.set_xlabel("column (azimuth)")
    ax.set_ylabel("row")
    ax.set_title(title or "range image")
    fig.tight_layout()
    _finish(fig, path)


def plot_augmented_scene(scan: LidarScan, path, inserted: Optional[np.ndarray] = None,
                         boxes: Sequence[OrientedBox] = (), new_boxes: Sequence[OrientedBox] = (),
                         max_points: int = 60000, title: str = "") -> None:
    """Top-down scatter of a scan; inserted points and boxes highlighted."""
    xyz = scan.xyz
    n = len(xyz)
    inserted = np.zeros(n, bool) if inserted is None else np.asarray(inserted, bool)
    step = max(1, n // max_points)
    base = np.flatnonzero(~inserted)[::step]
    fig, ax = plt.subplots(figsize=(9, 9))
    ax.scatter(xyz[base, 0], xyz[base, 1], s=0.2, c="#808080", linewidths=0)
    ax.scatter(xyz[inserted, 0], xyz[inserted, 1], s=1.0, c="#d03030", linewidths=0)
    _draw_boxes(ax, boxes, "#3060c0", 0.8)
    _draw_boxes(ax, new_boxes, "#d03030", 1.2)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title or scan.frame_id)
    fig.tight_layout()
    _finish(fig, path)


def plot_report(per_class: Mapping[str, int], failures: Mapping[str, int], path,
                title: str = "insertions per class") -> None:
    names = sorted(per_class)
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(10, 3.5))
    a0.bar(names, [per_class[k] for k in names], color="#4f8fd6")
    a0.set_title(title)
    a0.tick_params(axis="x", rotation=30)
    fnames = sorted(failures)
    a1.bar(fnames, [failures[k] for k in fnames], color="#c05050")
    a1.set_title("failed rounds")
    fig.tight_layout()
    _finish(fig, path)
