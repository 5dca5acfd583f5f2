"""Hierarchical point grouping.

Round 1 links same-label points closer than ``r1`` and takes connected
components. Each later round links same-label groups of the previous round
whose closest member points are closer than ``r_h``. The union of all rounds,
without exact duplicates and without groups smaller than ``min_group_size``,
is the proposal set.

All rounds run on one engine, :func:`link_components`. It buckets points by
(label, grid cell) with cells of side ``r/2``, so bucket mates are always
linked; neighbouring buckets are linked first through one representative
point each, and only bucket pairs still in different components afterwards
are checked point by point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import PipelineConfig, PointCloud, ShiftedCloud, ValidationError
from .spatial import neighbor_bucket_pairs, pack_cells, within_radius

__all__ = [
    "Group",
    "GroupingResult",
    "link_components",
    "cluster_round1",
    "merge_round",
    "hierarchical_group",
    "groups_from_assignment",
]

# Upper bound on point pairs materialised at once during the exact check.
_PAIR_CHUNK = 4_000_000


@dataclass(frozen=True, eq=False)
class Group:
    point_indices: np.ndarray
    semantic_class: int
    round: int

    def __post_init__(self):
        idx = np.array(self.point_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValidationError("group must contain at least one point")
        idx.setflags(write=False)
        object.__setattr__(self, "point_indices", idx)
        object.__setattr__(self, "semantic_class", int(self.semantic_class))
        object.__setattr__(self, "round", int(self.round))

    def __len__(self) -> int:
        return self.point_indices.size

    @property
    def key(self) -> tuple:
        """Identity used for ordering: (round, class, smallest member)."""
        return (self.round, self.semantic_class, int(self.point_indices[0]))

    def same_points(self, other: "Group") -> bool:
        return np.array_equal(self.point_indices, other.point_indices)


def _components(num_nodes: int, a: list, b: list) -> np.ndarray:
    rows = np.concatenate(a) if a else np.empty(0, dtype=np.int64)
    cols = np.concatenate(b) if b else np.empty(0, dtype=np.int64)
    graph = coo_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(num_nodes, num_nodes)
    ).tocsr()
    _, comp = connected_components(graph, directed=False)
    return comp


def link_components(coords: np.ndarray, labels: np.ndarray, init: np.ndarray, radius: float) -> np.ndarray:
    """Connected components after linking same-label points closer than ``radius``.

    Args:
        coords: (M, 3) coordinates of the participating points.
        labels: (M,) semantic label per point.
        init: (M,) node id per point in ``[0, P)``; points sharing an id are
            already connected (the previous round's groups).
        radius: strict linking distance.

    Returns:
        (M,) component id per point (arbitrary but deterministic numbering).
    """
    m = coords.shape[0]
    if m == 0:
        return np.empty(0, dtype=np.int64)
    num_init = int(init.max()) + 1
    # Slightly enlarged r/2 cells: bucket mates stay within 0.87r and any
    # linked pair is at most two cells apart despite rounding in floor().
    cell = radius * 0.5 * (1.0 + 1e-7)
    ck = pack_cells(coords, labels, cell, margin=2)
    nb = ck.keys.size
    bucket = ck.bucket

    rows = [init]
    cols = [num_init + bucket]

    # Bucket representative: member nearest the bucket centroid.
    counts = np.bincount(bucket, minlength=nb)
    cent = np.stack([np.bincount(bucket, coords[:, k], nb) for k in range(3)], axis=1)
    cent /= counts[:, None]
    d2 = np.sum((coords - cent[bucket]) ** 2, axis=1)
    by_bucket = np.lexsort((np.arange(m), d2, bucket))
    starts = np.r_[0, np.cumsum(counts)[:-1]]
    rep = by_bucket[starts]

    pa, pb = neighbor_bucket_pairs(ck, reach=2)
    if pa.size:
        linked = within_radius(coords[rep[pa]] - coords[rep[pb]], radius)
        rows.append(num_init + pa[linked])
        cols.append(num_init + pb[linked])
        pa, pb = pa[~linked], pb[~linked]

    comp = _components(num_init + nb, rows, cols)
    if pa.size:
        open_ = comp[num_init + pa] != comp[num_init + pb]
        pa, pb = pa[open_], pb[open_]
    if pa.size:
        # Members of bucket k are by_bucket[starts[k] : starts[k] + counts[k]].
        # Lexsort put the representative first; member order is irrelevant here.
        hits_a, hits_b = [], []
        sizes = counts[pa] * counts[pb]
        cum = np.cumsum(sizes)
        lo = 0
        while lo < pa.size:
            base = cum[lo - 1] if lo else 0
            hi = max(lo + 1, int(np.searchsorted(cum, base + _PAIR_CHUNK, side="right")))
            ca, cb, sz = pa[lo:hi], pb[lo:hi], sizes[lo:hi]
            owner = np.repeat(np.arange(ca.size), sz)
            t = np.arange(owner.size) - np.repeat(np.cumsum(sz) - sz, sz)
            nbk = counts[cb][owner]
            ia = by_bucket[starts[ca][owner] + t // nbk]
            ib = by_bucket[starts[cb][owner] + t % nbk]
            close = within_radius(coords[ia] - coords[ib], radius)
            if close.any():
                hit_pairs = np.unique(owner[close])
                hits_a.append(num_init + ca[hit_pairs])
                hits_b.append(num_init + cb[hit_pairs])
            lo = hi
        if hits_a:
            comp = _components(num_init + nb, rows + hits_a, cols + hits_b)
    return comp[init]


def _canonical(assign: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Renumber components by (class, smallest member index); -1 stays -1."""
    out = np.full(assign.shape, -1, dtype=np.int64)
    active = np.flatnonzero(assign >= 0)
    if active.size == 0:
        return out
    ids, first = np.unique(assign[active], return_index=True)
    first_pt = active[first]  # active is ascending, so this is the minimum member
    order = np.lexsort((first_pt, labels[first_pt]))
    rank = np.empty(ids.size, dtype=np.int64)
    rank[order] = np.arange(ids.size)
    out[active] = rank[np.searchsorted(ids, assign[active])]
    return out


def groups_from_assignment(assign: np.ndarray, labels: np.ndarray, round: int,
                           keep: Optional[np.ndarray] = None) -> list[Group]:
    """Groups of a canonical assignment, in id order. ``keep`` selects ids."""
    active = np.flatnonzero(assign >= 0)
    if active.size == 0:
        return []
    order = active[np.argsort(assign[active], kind="stable")]
    counts = np.bincount(assign[active])
    splits = np.split(order, np.cumsum(counts)[:-1])
    ids = range(counts.size) if keep is None else keep
    return [Group(splits[g], int(labels[splits[g][0]]), round) for g in ids]


def _check_inputs(coords, labels) -> tuple[np.ndarray, np.ndarray]:
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValidationError(f"coords must have shape (N, 3), got {coords.shape}")
    if labels.shape != (coords.shape[0],):
        raise ValidationError(
            f"length mismatch: {coords.shape[0]} coordinates, {labels.size} labels"
        )
    if not np.all(np.isfinite(coords)):
        raise ValidationError("coordinates contain non-finite values")
    return coords, labels


def _round1_assignment(coords, labels, ignored, r1) -> np.ndarray:
    active = np.flatnonzero(~np.isin(labels, list(ignored))) if ignored else np.arange(labels.size)
    assign = np.full(labels.size, -1, dtype=np.int64)
    if active.size:
        assign[active] = link_components(
            coords[active], labels[active], np.arange(active.size), r1
        )
    return _canonical(assign, labels)


def _merge_assignment(prev: np.ndarray, coords, labels, radius) -> np.ndarray:
    active = np.flatnonzero(prev >= 0)
    assign = np.full(prev.shape, -1, dtype=np.int64)
    if active.size:
        assign[active] = link_components(coords[active], labels[active], prev[active], radius)
    return _canonical(assign, labels)


def cluster_round1(coords, labels, ignored: Sequence[int] = (), r1: float = 0.01) -> list[Group]:
    """First-round groups: components of the same-label ``< r1`` graph."""
    if not r1 > 0:
        raise ValidationError("r1 must be positive")
    coords, labels = _check_inputs(coords, labels)
    assign = _round1_assignment(coords, labels, frozenset(ignored), r1)
    return groups_from_assignment(assign, labels, 1)


def merge_round(prev: Sequence[Group], coords, r_h: float, round: int,
                prev_radius: Optional[float] = None) -> list[Group]:
    """Merge same-class groups whose closest points are nearer than ``r_h``."""
    if not r_h > 0:
        raise ValidationError("r_h must be positive")
    if prev_radius is not None and not r_h > prev_radius:
        raise ValidationError(
            f"radius {r_h} must be greater than the previous round's radius {prev_radius}"
        )
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    assign = np.full(n, -1, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    for gid, g in enumerate(prev):
        if np.any(assign[g.point_indices] >= 0):
            raise ValidationError("previous-round groups must be disjoint")
        assign[g.point_indices] = gid
        labels[g.point_indices] = g.semantic_class
    merged = _merge_assignment(assign, coords, labels, r_h)
    return groups_from_assignment(merged, labels, round)


@dataclass(eq=False)
class GroupingResult:
    """Per-round canonical assignments plus the filtered multi-scale union.

    ``assignments[h][i]`` is point i's group id in round h+1, or -1 when the
    point takes part in no group (ignored class).
    """

    assignments: list
    labels: np.ndarray
    merged: list
    _rounds: Optional[list] = field(default=None, repr=False)

    @property
    def rounds(self) -> list[list[Group]]:
        if self._rounds is None:
            self._rounds = [
                groups_from_assignment(a, self.labels, h + 1) for h, a in enumerate(self.assignments)
            ]
        return self._rounds

    def group_counts(self) -> list[int]:
        return [int(a.max()) + 1 if a.size and a.max() >= 0 else 0 for a in self.assignments]


def hierarchical_group(cloud: PointCloud, shifted: Optional[ShiftedCloud], cfg: PipelineConfig) -> GroupingResult:
    """Run every grouping round and collect the size-filtered union."""
    labels = np.asarray(cloud.labels(), dtype=np.int64)
    if cfg.cluster_space == "shifted":
        if shifted is None:
            raise ValidationError("offsets required: shifted-space grouping needs centroids")
        coords = shifted.centroids
    else:
        coords = cloud.positions
    coords, labels = _check_inputs(coords, labels)

    assignments = [_round1_assignment(coords, labels, cfg.ignored_classes, cfg.radii[0])]
    for r in cfg.radii[1:]:
        assignments.append(_merge_assignment(assignments[-1], coords, labels, r))

    merged: list[Group] = []
    seen: set = set()
    for h, assign in enumerate(assignments):
        active = assign >= 0
        if not active.any():
            continue
        sizes = np.bincount(assign[active])
        big = np.flatnonzero(sizes >= cfg.min_group_size)
        for g in groups_from_assignment(assign, labels, h + 1, keep=big):
            k = g.point_indices.tobytes()
            if k in seen:
                continue
            seen.add(k)
            merged.append(g)
    return GroupingResult(assignments, labels, merged)
