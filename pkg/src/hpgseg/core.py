"""Domain types, pipeline configuration and point-cloud I/O.

Two text formats are supported. The columnar format is a header line of
space separated column names followed by one point per line::

    x y z r g b sem inst offx offy offz f0 f1

ASCII PLY uses the same column vocabulary for vertex property names.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "CoreError",
    "ParseError",
    "ValidationError",
    "InvariantError",
    "PointCloud",
    "ShiftedCloud",
    "GroundTruthInstance",
    "PipelineConfig",
    "CLUSTER_SPACES",
    "load_cloud",
    "save_cloud",
    "shift_points",
    "voxel_downsample",
    "instances_from_labels",
]

CLUSTER_SPACES = ("shifted", "original")
FORMATS = ("columnar", "ply_ascii")

_FIXED_COLUMNS = ("x", "y", "z", "r", "g", "b", "sem", "inst", "offx", "offy", "offz")
_FEATURE_RE = re.compile(r"^f(\d+)$")


class CoreError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(CoreError, ValueError):
    """Input violates a documented precondition."""


class InvariantError(CoreError, AssertionError):
    """An internal consistency check failed."""


class ParseError(ValidationError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a: Optional[np.ndarray], dtype=None) -> Optional[np.ndarray]:
    if a is None:
        return None
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Per-point arrays for one scene.

    Optional columns are ``None`` when absent; they are never zero-filled.
    Arrays are copied and made read-only on construction.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    semantic_scores: Optional[np.ndarray] = None
    semantic_labels: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    gt_instance_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValidationError(f"positions must have shape (N, 3), got {pos.shape}")
        n = pos.shape[0]
        if n == 0:
            raise ValidationError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions contain non-finite values")
        object.__setattr__(self, "positions", _frozen(pos, np.float64))

        specs = {
            "colors": (np.float64, 2, 3),
            "semantic_scores": (np.float64, 2, None),
            "semantic_labels": (np.int64, 1, None),
            "offsets": (np.float64, 2, 3),
            "features": (np.float64, 2, None),
            "gt_instance_ids": (np.int64, 1, None),
        }
        for name, (dtype, ndim, width) in specs.items():
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.asarray(value)
            if arr.ndim != ndim:
                raise ValidationError(f"{name} must be {ndim}-D, got shape {arr.shape}")
            if arr.shape[0] != n:
                raise ValidationError(
                    f"length mismatch: {name} has {arr.shape[0]} rows, positions has {n}"
                )
            if width is not None and arr.shape[1] != width:
                raise ValidationError(f"{name} must have {width} columns")
            if dtype is np.float64 and not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            object.__setattr__(self, name, _frozen(arr, dtype))

        if self.colors is not None and (self.colors.min() < 0 or self.colors.max() > 1):
            raise ValidationError("colors must lie in [0, 1]")
        if self.semantic_labels is not None and self.semantic_labels.min() < 0:
            raise ValidationError("semantic labels must be non-negative")
        if self.semantic_scores is not None and self.semantic_labels is not None:
            C = self.semantic_scores.shape[1]
            if self.semantic_labels.max() >= C:
                raise ValidationError("semantic labels exceed the number of score columns")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    def labels(self) -> np.ndarray:
        """Semantic label per point, derived from the scores when not given.

        ``np.argmax`` returns the first maximum, so ties go to the lowest id.
        """
        if self.semantic_labels is not None:
            return self.semantic_labels
        if self.semantic_scores is not None:
            out = np.argmax(self.semantic_scores, axis=1).astype(np.int64)
            out.setflags(write=False)
            return out
        raise ValidationError("semantic labels required (no 'sem' column or scores)")

    def replace(self, **changes) -> "PointCloud":
        return dataclasses.replace(self, **changes)

    def subset(self, indices: Sequence[int]) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        kw = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            kw[f.name] = None if v is None else v[idx]
        return PointCloud(**kw)

    def equals(self, other: "PointCloud") -> bool:
        """Bit-exact equality of every column, absent columns included."""
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or a.tobytes() != b.tobytes()):
                return False
        return True


@dataclass(frozen=True, eq=False)
class ShiftedCloud:
    centroids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centroids", _frozen(self.centroids, np.float64))


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    id: int
    semantic_class: int
    point_indices: np.ndarray
    centroid: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.point_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValidationError(f"instance {self.id}: point_indices must be a non-empty 1-D set")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValidationError(f"instance {self.id}: point_indices must be strictly ascending")
        object.__setattr__(self, "point_indices", _frozen(idx))
        object.__setattr__(self, "centroid", _frozen(self.centroid, np.float64))
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "semantic_class", int(self.semantic_class))

    @classmethod
    def from_points(cls, id: int, semantic_class: int, point_indices, positions) -> "GroundTruthInstance":
        idx = np.unique(np.asarray(point_indices, dtype=np.int64))
        return cls(id, semantic_class, idx, np.asarray(positions)[idx].mean(axis=0))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "class": self.semantic_class,
            "centroid": [float(c) for c in self.centroid],
            "indices": [int(i) for i in self.point_indices],
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruthInstance":
        try:
            return cls(d["id"], d["class"], d["indices"], d["centroid"])
        except KeyError as e:
            raise ValidationError(f"ground-truth instance missing field {e}") from None


def instances_from_labels(positions, instance_ids, semantic_labels) -> list[GroundTruthInstance]:
    """Build GT instances from per-point ids; class is the members' most common label."""
    inst = np.asarray(instance_ids, dtype=np.int64)
    sem = np.asarray(semantic_labels, dtype=np.int64)
    out = []
    for iid in np.unique(inst[inst >= 0]):
        members = np.flatnonzero(inst == iid)
        cls = int(np.argmax(np.bincount(sem[members])))
        out.append(GroundTruthInstance.from_points(int(iid), cls, members, positions))
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Parameters for grouping, masking, scoring and NMS."""

    radii: tuple = (0.01, 0.03, 0.05)
    min_group_size: int = 50
    nms_iou: float = 0.7
    cluster_space: str = "shifted"
    mask_binarize_threshold: float = 0.5
    ignored_classes: frozenset = field(default_factory=frozenset)
    score_iou_low: float = 0.25
    score_iou_high: float = 0.75
    rng_seed: int = 0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "ignored_classes", frozenset(int(c) for c in self.ignored_classes))
        if not radii:
            raise ValidationError("radii: at least one radius is required")
        if any(not math.isfinite(r) or r <= 0 for r in radii):
            raise ValidationError("radii: every radius must be a positive finite number")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValidationError("radii: must be strictly increasing")
        if int(self.min_group_size) != self.min_group_size or self.min_group_size < 1:
            raise ValidationError("min_group_size: must be a positive integer")
        object.__setattr__(self, "min_group_size", int(self.min_group_size))
        if not 0 < self.nms_iou <= 1:
            raise ValidationError("nms_iou: must lie in (0, 1]")
        if self.cluster_space not in CLUSTER_SPACES:
            raise ValidationError(f"cluster_space: must be one of {CLUSTER_SPACES}")
        if not 0 < self.mask_binarize_threshold < 1:
            raise ValidationError("mask_binarize_threshold: must lie in (0, 1)")
        lo, hi = self.score_iou_low, self.score_iou_high
        if not (0 <= lo < hi <= 1):
            raise ValidationError("score_iou_low/score_iou_high: need 0 <= low < high <= 1")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ValidationError("rng_seed: must be an unsigned integer")

    @property
    def num_rounds(self) -> int:
        return len(self.radii)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["radii"] = list(self.radii)
        d["ignored_classes"] = sorted(self.ignored_classes)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# ----------------------------------------------------------------------------
# I/O


def _column_layout(names: list[str], line: int = 1) -> dict:
    seen = set()
    feats = {}
    for nm in names:
        if nm in seen:
            raise ParseError(f"duplicate column '{nm}'", line)
        seen.add(nm)
        m = _FEATURE_RE.match(nm)
        if m:
            feats[int(m.group(1))] = nm
        elif nm not in _FIXED_COLUMNS:
            raise ParseError(f"unknown column '{nm}'", line)
    for required in ("x", "y", "z"):
        if required not in seen:
            raise ParseError(f"missing mandatory column '{required}'", line)
    if feats and sorted(feats) != list(range(len(feats))):
        raise ParseError("feature columns must be f0..f(k-1) without gaps", line)
    for group in (("r", "g", "b"), ("offx", "offy", "offz")):
        present = [c in seen for c in group]
        if any(present) and not all(present):
            raise ParseError(f"columns {' '.join(group)} must appear together", line)
    return {nm: names.index(nm) for nm in names}


def _parse_rows(lines: Iterable[tuple[int, str]], ncols: int) -> np.ndarray:
    rows = []
    for lineno, text in lines:
        parts = text.split()
        if not parts:
            continue
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} values, found {len(parts)}", lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError("could not parse a decimal value", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        rows.append(vals)
    if not rows:
        raise ParseError("file contains no points")
    return np.array(rows, dtype=np.float64)


def _int_column(col: np.ndarray, name: str) -> np.ndarray:
    bad = np.flatnonzero(col != np.round(col))
    if bad.size:
        raise ParseError(f"column '{name}' must hold integers", None)
    return col.astype(np.int64)


def _cloud_from_table(table: np.ndarray, layout: dict) -> PointCloud:
    def cols(*names):
        return table[:, [layout[n] for n in names]]

    kw = {"positions": cols("x", "y", "z")}
    if "r" in layout:
        kw["colors"] = cols("r", "g", "b")
    if "offx" in layout:
        kw["offsets"] = cols("offx", "offy", "offz")
    if "sem" in layout:
        kw["semantic_labels"] = _int_column(table[:, layout["sem"]], "sem")
    if "inst" in layout:
        kw["gt_instance_ids"] = _int_column(table[:, layout["inst"]], "inst")
    fnames = sorted((n for n in layout if _FEATURE_RE.match(n)), key=lambda n: int(n[1:]))
    if fnames:
        kw["features"] = cols(*fnames)
    return PointCloud(**kw)


def _read_columnar(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or not lines[0].split():
        raise ParseError("missing header line", 1)
    names = lines[0].split()
    layout = _column_layout(names)
    table = _parse_rows(((i + 2, ln) for i, ln in enumerate(lines[1:])), len(names))
    return _cloud_from_table(table, layout)


def _read_ply_ascii(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    names: list[str] = []
    count = None
    in_vertex = False
    end = None
    for i, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise ParseError("only 'format ascii 1.0' is supported", i)
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
            elif count is not None:
                raise ParseError("elements after 'vertex' are not supported", i)
        elif tok[0] == "property":
            if tok[1] == "list":
                raise ParseError("list properties are not supported", i)
            if in_vertex:
                names.append(tok[2])
        elif tok[0] == "end_header":
            end = i
            break
        else:
            raise ParseError(f"unexpected header keyword '{tok[0]}'", i)
    if end is None:
        raise ParseError("missing 'end_header'")
    if count is None:
        raise ParseError("missing 'element vertex'")
    layout = _column_layout(names, end)
    body = [(j + end + 1, ln) for j, ln in enumerate(lines[end:]) if ln.strip()]
    if len(body) != count:
        raise ParseError(f"header declares {count} vertices, found {len(body)}")
    table = _parse_rows(body, len(names))
    return _cloud_from_table(table, layout)


def load_cloud(path, format: str = "columnar") -> PointCloud:
    """Read a point cloud from ``path``.

    Raises:
        ParseError: malformed content, with the offending line number.
        ValidationError: arrays of inconsistent length or non-finite values.
        OSError: the file cannot be read.
    """
    if format not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}")
    text = Path(path).read_text()
    if format == "columnar":
        return _read_columnar(text)
    return _read_ply_ascii(text)


def _table_for(cloud: PointCloud) -> tuple[list[str], list[np.ndarray], list[str]]:
    names, blocks, fmts = ["x", "y", "z"], [cloud.positions], ["%.17g"] * 3
    if cloud.colors is not None:
        names += ["r", "g", "b"]
        blocks.append(cloud.colors)
        fmts += ["%.17g"] * 3
    if cloud.semantic_labels is not None:
        names.append("sem")
        blocks.append(cloud.semantic_labels[:, None])
        fmts.append("%d")
    if cloud.gt_instance_ids is not None:
        names.append("inst")
        blocks.append(cloud.gt_instance_ids[:, None])
        fmts.append("%d")
    if cloud.offsets is not None:
        names += ["offx", "offy", "offz"]
        blocks.append(cloud.offsets)
        fmts += ["%.17g"] * 3
    if cloud.features is not None:
        k = cloud.features.shape[1]
        names += [f"f{j}" for j in range(k)]
        blocks.append(cloud.features)
        fmts += ["%.17g"] * k
    return names, blocks, fmts


def save_cloud(cloud: PointCloud, path, format: str = "columnar") -> None:
    """Write ``cloud``; decimals use 17 significant digits so reloads are bit-exact.

    Semantic scores have no column in either format and are not written.
    """
    if format not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}")
    names, blocks, fmts = _table_for(cloud)
    # Integer columns stay exact in float64 (ids are far below 2**53).
    table = np.hstack([b.astype(np.float64) for b in blocks])
    with Path(path).open("w") as fh:
        if format == "columnar":
            fh.write(" ".join(names) + "\n")
        else:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            for nm, fm in zip(names, fmts):
                fh.write(f"property {'int' if fm == '%d' else 'double'} {nm}\n")
            fh.write("end_header\n")
        np.savetxt(fh, table, fmt=fmts, delimiter=" ")


# ----------------------------------------------------------------------------
# Geometry


def shift_points(cloud: PointCloud) -> ShiftedCloud:
    """Move every point by its predicted offset."""
    if cloud.offsets is None:
        raise ValidationError("offsets required to compute shifted centroids")
    return ShiftedCloud(cloud.positions + cloud.offsets)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Keep one point per occupied voxel, the one nearest the voxel center.

    Ties go to the lowest index. Survivors keep their original relative order.
    """
    if not voxel_size > 0:
        raise ValidationError("voxel_size must be positive")
    cells = np.floor(cloud.positions / voxel_size).astype(np.int64)
    center = (cells + 0.5) * voxel_size
    d2 = np.sum((cloud.positions - center) ** 2, axis=1)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.lexsort((np.arange(len(cloud)), d2, inverse))
    first = np.ones(order.size, dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    keep = np.sort(order[first])
    if keep.size == len(cloud):
        return cloud
    return cloud.subset(keep)
