"""Fixed-radius neighbor search on a uniform grid.

The distance predicate everywhere is strict: ``|p - q| < r``. It is evaluated
on squared distances, except for radii so small that squaring underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .core import ValidationError

__all__ = [
    "GridIndex",
    "build_index",
    "neighbors_within",
    "brute_neighbors",
    "within_radius",
    "CellKeys",
    "pack_cells",
    "neighbor_bucket_pairs",
]

# Below this radius r*r loses precision or underflows; use hypot instead.
_TINY_RADIUS = 1e-150


def within_radius(diff: np.ndarray, radius: float) -> np.ndarray:
    """Boolean mask of rows of ``diff`` (shape (M, 3)) shorter than ``radius``."""
    diff = np.asarray(diff, dtype=np.float64)
    if radius < _TINY_RADIUS:
        return np.hypot(np.hypot(diff[:, 0], diff[:, 1]), diff[:, 2]) < radius
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    return d2 < radius * radius


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"points must have shape (N, 3), got {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class GridIndex:
    """Point indices bucketed by integer cell ``floor(p / cell_size)``."""

    cell_size: float
    cells: dict
    point_count: int
    points: np.ndarray

    def cell_of(self, p) -> tuple:
        return tuple(int(c) for c in np.floor(np.asarray(p, dtype=np.float64) / self.cell_size))


def build_index(points, cell_size: float) -> GridIndex:
    if not cell_size > 0:
        raise ValidationError("cell_size must be positive")
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValidationError("points must be non-empty")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite values")
    coords = np.floor(pts / cell_size).astype(np.int64)
    # Stable sort keeps each cell's indices ascending.
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    sc = coords[order]
    starts = np.flatnonzero(np.r_[True, np.any(sc[1:] != sc[:-1], axis=1)])
    ends = np.r_[starts[1:], order.size]
    cells = {
        tuple(int(v) for v in sc[s]): order[s:e].tolist() for s, e in zip(starts, ends)
    }
    pts = pts.copy()
    pts.setflags(write=False)
    return GridIndex(float(cell_size), cells, int(pts.shape[0]), pts)


def neighbors_within(index: GridIndex, query, radius: float) -> list[int]:
    """Indices strictly closer than ``radius`` to ``query``, ascending."""
    q = np.asarray(query, dtype=np.float64)
    reach = max(1, math.ceil(radius / index.cell_size))
    cx, cy, cz = index.cell_of(q)
    cand = []
    for dx, dy, dz in product(range(-reach, reach + 1), repeat=3):
        members = index.cells.get((cx + dx, cy + dy, cz + dz))
        if members:
            cand.extend(members)
    if not cand:
        return []
    cand = np.asarray(cand, dtype=np.int64)
    hit = within_radius(index.points[cand] - q, radius)
    return sorted(cand[hit].tolist())


def brute_neighbors(points, query, radius: float) -> list[int]:
    pts = _as_points(points)
    q = np.asarray(query, dtype=np.float64)
    return np.flatnonzero(within_radius(pts - q, radius)).tolist()


# ----------------------------------------------------------------------------
# Vectorized bucket machinery for the grouping engine


@dataclass(frozen=True, eq=False)
class CellKeys:
    """Packed (label, cell) keys; ``keys`` is sorted and unique per bucket.

    ``bucket`` maps each input point to its row in ``keys``; ``strides`` lets
    a cell offset be added directly to a packed key.
    """

    keys: np.ndarray
    bucket: np.ndarray
    strides: tuple


def pack_cells(coords: np.ndarray, labels: np.ndarray, cell_size: float, margin: int) -> CellKeys:
    """Bucket points by semantic label and grid cell.

    ``margin`` empty cells are padded on each side of every axis so offsets in
    ``[-margin, margin]`` never wrap into another row, plane or label.
    """
    cells = np.floor(coords / cell_size).astype(np.int64)
    cells -= cells.min(axis=0) - margin
    dims = cells.max(axis=0) + margin + 1
    sy = int(dims[2])
    sx = int(dims[1]) * sy
    sl = int(dims[0]) * sx
    if (int(labels.max()) + 1) * sl >= 2**62:
        raise ValidationError("scene extent too large for the cell size")
    key = labels.astype(np.int64) * sl + cells[:, 0] * sx + cells[:, 1] * sy + cells[:, 2]
    keys, bucket = np.unique(key, return_inverse=True)
    return CellKeys(keys, bucket.ravel(), (sx, sy, 1))


def neighbor_bucket_pairs(ck: CellKeys, reach: int) -> tuple[np.ndarray, np.ndarray]:
    """All (a, b) bucket pairs with equal labels whose cells differ by a
    nonzero offset in ``[-reach, reach]^3``, each unordered pair once."""
    sx, sy, sz = ck.strides
    keys = ck.keys
    out_a, out_b = [], []
    for d in product(range(-reach, reach + 1), repeat=3):
        if d <= (0, 0, 0):
            continue  # half of the offsets covers every unordered pair
        delta = d[0] * sx + d[1] * sy + d[2] * sz
        target = keys + delta
        pos = np.searchsorted(keys, target)
        pos[pos == keys.size] = 0
        hit = keys[pos] == target
        if hit.any():
            out_a.append(np.flatnonzero(hit))
            out_b.append(pos[hit])
    if not out_a:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(out_a), np.concatenate(out_b)
