"""Synthetic scenes and simulated per-point predictions.

Instances are axis-aligned box or sphere surfaces sampled on a lattice whose
step never exceeds ``intra_spacing``, placed by rejection sampling so that
surfaces are at least ``min_gap`` apart. :func:`simulate_predictions` fills
in what a trained backbone would: offsets toward instance centroids,
semantic scores and feature vectors, each with seeded corruption.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import GroundTruthInstance, PointCloud, ValidationError

__all__ = [
    "SceneSpec",
    "NoiseSpec",
    "SHAPES",
    "generate_scene",
    "simulate_predictions",
    "sample_surface",
    "scene_for_size",
    "parse_batch_spec",
]

SHAPES = ("box", "sphere")
MAX_ATTEMPTS = 10_000


def _pair(value, name) -> tuple:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name}: expected a [low, high] pair") from None
    if lo > hi:
        raise ValidationError(f"{name}: low must not exceed high")
    return lo, hi


@dataclass(frozen=True)
class SceneSpec:
    num_instances: int = 10
    classes: tuple = (0, 1, 2)
    shape: str = "box"
    points_per_instance: tuple = (50, 100_000)
    instance_extent: tuple = (0.2, 0.4)
    min_gap: float = 0.1
    intra_spacing: float = 0.008
    bounds: tuple = ((0.0, 0.0, 0.0), (4.0, 4.0, 2.0))
    seed: int = 0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if int(self.num_instances) != self.num_instances or self.num_instances < 1:
            raise ValidationError("num_instances: must be a positive integer")
        set_("num_instances", int(self.num_instances))
        classes = tuple(int(c) for c in self.classes)
        if not classes or min(classes) < 0:
            raise ValidationError("classes: need at least one non-negative class id")
        set_("classes", tuple(sorted(set(classes))))
        if self.shape not in SHAPES:
            raise ValidationError(f"shape: must be one of {SHAPES}")
        ppi = _pair(self.points_per_instance, "points_per_instance")
        if ppi[0] < 1:
            raise ValidationError("points_per_instance: lower bound must be at least 1")
        set_("points_per_instance", (int(ppi[0]), int(ppi[1])))
        ext = _pair(self.instance_extent, "instance_extent")
        if ext[0] <= 0:
            raise ValidationError("instance_extent: must be positive")
        set_("instance_extent", ext)
        if not self.min_gap > 0:
            raise ValidationError("min_gap: must be positive")
        if not self.intra_spacing > 0:
            raise ValidationError("intra_spacing: must be positive")
        try:
            lo = tuple(float(v) for v in self.bounds[0])
            hi = tuple(float(v) for v in self.bounds[1])
        except (TypeError, ValueError, IndexError):
            raise ValidationError("bounds: expected [[x0, y0, z0], [x1, y1, z1]]") from None
        if len(lo) != 3 or len(hi) != 3 or any(b <= a for a, b in zip(lo, hi)):
            raise ValidationError("bounds: need three axes with low < high")
        set_("bounds", (lo, hi))
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed: must be an unsigned integer")
        set_("seed", int(self.seed))

    @classmethod
    def from_json(cls, d: dict, path: str = "scene") -> "SceneSpec":
        return _from_json(cls, d, path)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["classes"] = list(self.classes)
        d["points_per_instance"] = list(self.points_per_instance)
        d["instance_extent"] = list(self.instance_extent)
        d["bounds"] = [list(self.bounds[0]), list(self.bounds[1])]
        return d


@dataclass(frozen=True)
class NoiseSpec:
    offset_sigma: float = 0.0
    semantic_flip_rate: float = 0.0
    mask_flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.offset_sigma >= 0:
            raise ValidationError("offset_sigma: must be non-negative")
        for name in ("semantic_flip_rate", "mask_flip_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValidationError(f"{name}: must lie in [0, 1)")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed: must be an unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_json(cls, d: dict, path: str = "noise") -> "NoiseSpec":
        return _from_json(cls, d, path)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _from_json(cls, d, path):
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in d:
        if k not in known:
            raise ValidationError(f"{path}.{k}: unknown field")
    try:
        return cls(**d)
    except ValidationError as e:
        raise ValidationError(f"{path}.{e}") from None


# ----------------------------------------------------------------------------
# Geometry


def _box_surface(size: np.ndarray, spacing: float) -> np.ndarray:
    n = np.maximum(np.ceil(size / spacing).astype(np.int64) + 1, 2)
    step = size / (n - 1)
    faces = []
    for a in range(3):
        b, c = [k for k in range(3) if k != a]
        ib, ic = np.meshgrid(np.arange(n[b]), np.arange(n[c]), indexing="ij")
        for side in (0, n[a] - 1):
            f = np.empty((ib.size, 3), dtype=np.int64)
            f[:, a] = side
            f[:, b] = ib.ravel()
            f[:, c] = ic.ravel()
            faces.append(f)
    idx = np.unique(np.concatenate(faces), axis=0)
    return idx * step - size / 2


def _sphere_surface(diameter: float, spacing: float) -> np.ndarray:
    radius = diameter / 2
    # Fibonacci lattice; 0.75 * spacing hexagonal cells keep every gap below spacing.
    cell = 0.75 * spacing
    n = max(4, math.ceil(4 * math.pi * radius**2 / (math.sqrt(3) / 2 * cell**2)))
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    theta = math.pi * (1 + math.sqrt(5)) * i
    rho = np.sqrt(1 - z * z)
    return radius * np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)


def sample_surface(shape: str, size: np.ndarray, spacing: float) -> np.ndarray:
    """Surface points centred at the origin. ``size`` is (3,) for boxes; a
    sphere uses ``size[0]`` as its diameter."""
    if shape == "box":
        return _box_surface(np.asarray(size, dtype=np.float64), spacing)
    return _sphere_surface(float(size[0]), spacing)


def _half_extent(shape, size):
    return size / 2 if shape == "box" else np.full(3, size[0] / 2)


def _gap(shape, c1, s1, c2, s2) -> float:
    if shape == "sphere":
        return float(np.linalg.norm(c1 - c2) - s1[0] / 2 - s2[0] / 2)
    sep = np.maximum(np.abs(c1 - c2) - (s1 + s2) / 2, 0)
    return float(np.linalg.norm(sep))


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, list[GroundTruthInstance]]:
    """Sample a scene; ``semantic_labels`` of the cloud are the true classes."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = np.array(spec.bounds[0]), np.array(spec.bounds[1])
    placed: list[tuple] = []
    attempts = 0
    while len(placed) < spec.num_instances:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise ValidationError(
                f"infeasible packing: placed {len(placed)} of {spec.num_instances} "
                f"instances in {MAX_ATTEMPTS} attempts"
            )
        e_lo, e_hi = spec.instance_extent
        if spec.shape == "box":
            size = rng.uniform(e_lo, e_hi, 3)
        else:
            size = np.full(3, rng.uniform(e_lo, e_hi))
        half = _half_extent(spec.shape, size)
        if np.any(hi - lo < 2 * half):
            continue
        center = rng.uniform(lo + half, hi - half)
        if any(_gap(spec.shape, center, size, c, s) < spec.min_gap for c, s, _ in placed):
            continue
        pts = sample_surface(spec.shape, size, spec.intra_spacing)
        if not spec.points_per_instance[0] <= len(pts) <= spec.points_per_instance[1]:
            continue
        placed.append((center, size, pts))

    classes = rng.choice(np.array(spec.classes), size=spec.num_instances)
    positions = np.concatenate([c + p for c, _, p in placed])
    inst = np.concatenate([np.full(len(p), k) for k, (_, _, p) in enumerate(placed)])
    perm = rng.permutation(len(positions))
    positions, inst = positions[perm], inst[perm]
    sem = classes[inst]
    cloud = PointCloud(positions=positions, semantic_labels=sem, gt_instance_ids=inst)
    gts = []
    for k in range(spec.num_instances):
        gts.append(GroundTruthInstance.from_points(k, int(classes[k]), np.flatnonzero(inst == k), positions))
    return cloud, gts


def simulate_predictions(cloud: PointCloud, gts: list[GroundTruthInstance], noise: NoiseSpec,
                         num_classes: Optional[int] = None) -> PointCloud:
    """Stand-in for the backbone: noisy offsets, labels, scores and features.

    Offsets point at the true centroid plus isotropic Gaussian noise. A label
    flips to a uniformly drawn other class with ``semantic_flip_rate``.
    Features are the position followed by a one-hot of the predicted label.
    """
    if cloud.gt_instance_ids is None or cloud.semantic_labels is None:
        raise ValidationError("ground-truth fields required: 'inst' and 'sem'")
    rng = np.random.default_rng(noise.seed)
    n = len(cloud)
    true_sem = cloud.semantic_labels
    C = num_classes
    if C is None:
        C = int(max(true_sem.max(), max((g.semantic_class for g in gts), default=0))) + 1

    target = cloud.positions.copy()
    for g in gts:
        target[g.point_indices] = g.centroid
    offsets = target - cloud.positions
    if noise.offset_sigma > 0:
        offsets = offsets + rng.normal(0.0, noise.offset_sigma, size=(n, 3))

    labels = true_sem.copy()
    if noise.semantic_flip_rate > 0 and C > 1:
        flip = rng.random(n) < noise.semantic_flip_rate
        shift = rng.integers(1, C, size=n)
        labels[flip] = (labels[flip] + shift[flip]) % C

    if C > 1:
        scores = np.full((n, C), 0.1 / (C - 1))
        scores[np.arange(n), labels] = 0.9
    else:
        scores = np.ones((n, 1))
    one_hot = np.zeros((n, C))
    one_hot[np.arange(n), labels] = 1.0
    features = np.hstack([cloud.positions, one_hot])
    return cloud.replace(offsets=offsets, semantic_labels=labels, semantic_scores=scores,
                         features=features)


def scene_for_size(num_points: int, seed: int = 0, spacing: float = 0.008) -> tuple[PointCloud, list[GroundTruthInstance]]:
    """A box scene cropped to exactly ``num_points`` points, for benchmarking."""
    if num_points < 1:
        raise ValidationError("num_points must be positive")
    # A 0.2-0.4 m box at 8 mm spacing has ~4-15k surface points.
    per = 6 * 0.3**2 / spacing**2
    k = max(1, math.ceil(1.3 * num_points / per))
    side = max(2.0, 0.9 * math.ceil(math.sqrt(k)))
    spec = SceneSpec(num_instances=k, instance_extent=(0.2, 0.4), min_gap=0.1, intra_spacing=spacing,
                     bounds=((0, 0, 0), (side, side, 1.0)), seed=seed)
    cloud, gts = generate_scene(spec)
    while len(cloud) < num_points:
        spec = dataclasses.replace(spec, num_instances=spec.num_instances + k)
        spec = dataclasses.replace(spec, bounds=((0, 0, 0), (side * 1.5, side * 1.5, 1.0)))
        cloud, gts = generate_scene(spec)
    # Whole instances first; the last one is cut by a plane oblique to every
    # lattice face so the cut does not scatter single face points.
    sweep = cloud.positions @ np.array([1.0, 0.37, 0.11])
    order = np.lexsort((sweep, cloud.gt_instance_ids))
    keep = np.sort(order[:num_points])
    cropped = cloud.subset(keep)
    out = []
    new_index = np.full(len(cloud), -1)
    new_index[keep] = np.arange(num_points)
    for g in gts:
        idx = np.sort(new_index[g.point_indices])
        idx = idx[idx >= 0]
        if idx.size:
            out.append(GroundTruthInstance.from_points(g.id, g.semantic_class, idx, cropped.positions))
    return cropped, out


def parse_batch_spec(doc: dict) -> tuple[list[SceneSpec], NoiseSpec]:
    """Expand a batch document into one SceneSpec per scene.

    Accepted layouts::

        {"scene": {...}, "num_scenes": 3, "noise": {...}}
        {"scenes": [{..., "count": 25}, {..., "count": 25}], "noise": {...}}

    Scene ``i`` of an entry uses ``seed + i``.
    """
    if not isinstance(doc, dict):
        raise ValidationError("spec: expected a JSON object")
    unknown = set(doc) - {"scene", "scenes", "num_scenes", "noise"}
    if unknown:
        raise ValidationError(f"spec.{sorted(unknown)[0]}: unknown field")
    noise = NoiseSpec.from_json(doc.get("noise", {}))
    entries = []
    if "scene" in doc:
        n = doc.get("num_scenes", 1)
        if int(n) != n or n < 1:
            raise ValidationError("spec.num_scenes: must be a positive integer")
        entries.append(("scene", dict(doc["scene"]), int(n)))
    for i, e in enumerate(doc.get("scenes", [])):
        if not isinstance(e, dict):
            raise ValidationError(f"spec.scenes[{i}]: expected an object")
        e = dict(e)
        n = e.pop("count", 1)
        if int(n) != n or n < 1:
            raise ValidationError(f"spec.scenes[{i}].count: must be a positive integer")
        entries.append((f"scenes[{i}]", e, int(n)))
    if not entries:
        raise ValidationError("spec: needs 'scene' or 'scenes'")
    specs = []
    for path, d, n in entries:
        base = SceneSpec.from_json(d, f"spec.{path}")
        specs.extend(dataclasses.replace(base, seed=base.seed + i) for i in range(n))
    return specs, noise
