"""Binary morphology on 2D boolean grids with explicit structuring elements.

Outside the grid, dilation sees background and erosion sees foreground, which
makes dilation/erosion an adjoint pair on the bounded grid: closing is then
extensive and idempotent right up to the border. Columns can optionally wrap
(used for 360 degree range images).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class SeedKind(enum.Enum):
    DISK = "disk"
    RECT = "rect"


@dataclass(frozen=True)
class StructuringElement:
    kind: SeedKind
    radius: int = 0
    rows: int = 1
    cols: int = 1

    @classmethod
    def disk(cls, radius: int) -> "StructuringElement":
        if radius < 0:
            raise ValueError("disk radius must be >= 0")
        return cls(SeedKind.DISK, radius=int(radius))

    @classmethod
    def rect(cls, rows: int, cols: int) -> "StructuringElement":
        if rows < 1 or cols < 1 or rows % 2 == 0 or cols % 2 == 0:
            raise ValueError("rectangular seed needs odd, positive rows and cols")
        return cls(SeedKind.RECT, rows=int(rows), cols=int(cols))

    @cached_property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        """(drow, dcol) offsets covered by the element, symmetric about (0, 0)."""
        if self.kind is SeedKind.DISK:
            r = self.radius
            return tuple(
                (dr, dc)
                for dr in range(-r, r + 1)
                for dc in range(-r, r + 1)
                if dr * dr + dc * dc <= r * r
            )
        hr, hc = self.rows // 2, self.cols // 2
        return tuple((dr, dc) for dr in range(-hr, hr + 1) for dc in range(-hc, hc + 1))

    @property
    def reach(self) -> int:
        return self.radius if self.kind is SeedKind.DISK else max(self.rows, self.cols) // 2

    def as_array(self) -> np.ndarray:
        offs = np.array(self.offsets)
        hr, hc = np.abs(offs).max(axis=0)
        out = np.zeros((2 * hr + 1, 2 * hc + 1), dtype=bool)
        out[offs[:, 0] + hr, offs[:, 1] + hc] = True
        return out

    def to_dict(self) -> dict:
        if self.kind is SeedKind.DISK:
            return {"kind": "disk", "radius": self.radius}
        return {"kind": "rect", "rows": self.rows, "cols": self.cols}

    @classmethod
    def from_dict(cls, d: dict) -> "StructuringElement":
        if d["kind"] == "disk":
            return cls.disk(d["radius"])
        return cls.rect(d["rows"], d["cols"])


def shift(a: np.ndarray, dr: int, dc: int, fill, wrap_cols: bool = False) -> np.ndarray:
    """``out[r, c] = a[r + dr, c + dc]``; out-of-grid reads return ``fill``."""
    rows, cols = a.shape
    if wrap_cols:
        a = np.roll(a, -dc, axis=1)
        dc = 0
    out = np.full_like(a, fill)
    r0, r1 = max(0, -dr), min(rows, rows - dr)
    c0, c1 = max(0, -dc), min(cols, cols - dc)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = a[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    return out


def dilate(mask: np.ndarray, seed: StructuringElement, wrap_cols: bool = False) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for dr, dc in seed.offsets:
        out |= shift(mask, dr, dc, False, wrap_cols)
    return out


def erode(mask: np.ndarray, seed: StructuringElement, wrap_cols: bool = False) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    out = np.ones_like(mask)
    for dr, dc in seed.offsets:
        out &= shift(mask, dr, dc, True, wrap_cols)
    return out


def close(mask: np.ndarray, seed: StructuringElement, wrap_cols: bool = False) -> np.ndarray:
    return erode(dilate(mask, seed, wrap_cols), seed, wrap_cols)


def neighborhood_mean(values: np.ndarray, valid: np.ndarray, seed: StructuringElement,
                      wrap_cols: bool = False) -> np.ndarray:
    """Mean of ``values[valid]`` over each cell's seed neighborhood (NaN if none)."""
    valid = np.asarray(valid, dtype=bool)
    v = np.where(valid, values, 0.0)
    total = np.zeros(valid.shape)
    count = np.zeros(valid.shape)
    for dr, dc in seed.offsets:
        total += shift(v, dr, dc, 0.0, wrap_cols)
        count += shift(valid, dr, dc, False, wrap_cols)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)
