"""Group refinement: target masks, quality scores, mask pooling, predictors.

A predictor maps a group (and the feature rows of its members) to a
per-member keep probability and one confidence score. The oracles here read
ground truth and stand in for a learned mask/score network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .core import GroundTruthInstance, PipelineConfig, PointCloud, ValidationError
from .hpg import Group
from .synth import NoiseSpec

__all__ = [
    "MaskedInstance",
    "MaskPredictor",
    "OracleExact",
    "OracleNoisy",
    "Constant",
    "PREDICTORS",
    "make_predictor",
    "set_iou",
    "best_gt_instance",
    "gt_mask",
    "gt_score",
    "mask_pool",
    "apply_mask",
]


def set_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two sorted unique index arrays."""
    if a.size == 0 and b.size == 0:
        return 0.0
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def best_gt_instance(group: Group, gts: Sequence[GroundTruthInstance]) -> tuple[int, float]:
    """Return ``(gt id, IoU)`` of the instance overlapping ``group`` best.

    Ties, including the all-zero case, go to the lowest GT id.
    """
    if not gts:
        raise ValidationError("at least one ground-truth instance is required")
    best_id, best = None, -1.0
    for gt in sorted(gts, key=lambda g: g.id):
        iou = set_iou(group.point_indices, gt.point_indices)
        if iou > best:
            best_id, best = gt.id, iou
    return best_id, best


def gt_mask(group: Group, gt: GroundTruthInstance) -> np.ndarray:
    """1 for members that belong to ``gt``, else 0, in member order."""
    return np.isin(group.point_indices, gt.point_indices).astype(np.int8)


def gt_score(iou: float, cfg: PipelineConfig) -> float:
    """Quality target: IoU mapped linearly from [low, high] onto [0, 1], clamped."""
    lo, hi = cfg.score_iou_low, cfg.score_iou_high
    return float(min(1.0, max(0.0, (iou - lo) / (hi - lo))))


def mask_pool(features, mask_probs) -> np.ndarray:
    """Mask-weighted mean of member features; plain mean when the mask has no mass."""
    f = np.asarray(features, dtype=np.float64)
    m = np.asarray(mask_probs, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValidationError("mask_pool needs a non-empty (N, k) feature array")
    if m.shape != (f.shape[0],):
        raise ValidationError("mask_pool: one mask value per feature row required")
    total = m.sum()
    if total < 1e-8:
        return f.mean(axis=0)
    return (m @ f) / total


@dataclass(frozen=True, eq=False)
class MaskedInstance:
    group: Group
    mask_probs: np.ndarray
    kept_indices: np.ndarray
    score: float
    pooled_feature: Optional[np.ndarray] = None


def apply_mask(group: Group, mask_probs, score: float, cfg: PipelineConfig,
               pooled_feature: Optional[np.ndarray] = None) -> MaskedInstance:
    probs = np.array(mask_probs, dtype=np.float64)
    if probs.shape != (len(group),):
        raise ValidationError(
            f"length mismatch: {probs.size} mask values for a group of {len(group)} points"
        )
    if np.any((probs < 0) | (probs > 1)) or not 0 <= score <= 1:
        raise ValidationError("mask probabilities and score must lie in [0, 1]")
    probs.setflags(write=False)
    kept = group.point_indices[probs >= cfg.mask_binarize_threshold]
    return MaskedInstance(group, probs, kept, float(score), pooled_feature)


class MaskPredictor(Protocol):
    def predict(self, group: Group, group_features: np.ndarray,
                cloud: PointCloud) -> tuple[np.ndarray, float]:
        """Per-member keep probabilities in [0, 1] and a score in [0, 1]."""
        ...


class _GTLookup:
    def __init__(self, gts: Sequence[GroundTruthInstance], cfg: PipelineConfig):
        if not gts:
            raise ValidationError("oracle predictors need ground-truth instances")
        self.gts = sorted(gts, key=lambda g: g.id)
        self.by_id = {g.id: g for g in self.gts}
        self.cfg = cfg

    def target(self, group: Group) -> GroundTruthInstance:
        gid, _ = best_gt_instance(group, self.gts)
        return self.by_id[gid]

    def score_for(self, kept: np.ndarray, gt: GroundTruthInstance) -> float:
        return gt_score(set_iou(kept, gt.point_indices), self.cfg)


class OracleExact(_GTLookup):
    """Mask is true membership in the best-matching instance."""

    def predict(self, group, group_features, cloud):
        gt = self.target(group)
        m = gt_mask(group, gt).astype(np.float64)
        return m, self.score_for(group.point_indices[m >= 0.5], gt)


class OracleNoisy(_GTLookup):
    """OracleExact with seeded label flips and probability jitter.

    The generator is seeded from the noise seed and the group's identity so a
    group gets the same mask regardless of call order or thread.
    """

    def __init__(self, gts, cfg, noise: NoiseSpec):
        super().__init__(gts, cfg)
        self.noise = noise

    def predict(self, group, group_features, cloud):
        gt = self.target(group)
        rng = np.random.default_rng(
            [self.noise.seed, group.round, group.semantic_class, int(group.point_indices[0]), len(group)]
        )
        m = gt_mask(group, gt).astype(np.float64)
        flip = rng.random(m.size) < self.noise.mask_flip_rate
        m[flip] = 1.0 - m[flip]
        thr = self.cfg.mask_binarize_threshold
        u = rng.random(m.size)
        probs = np.where(m > 0, thr + u * (1 - thr), u * thr)
        return probs, self.score_for(group.point_indices[probs >= thr], gt)


class Constant:
    """Keeps every point and gives every group full confidence."""

    def predict(self, group, group_features, cloud):
        return np.ones(len(group)), 1.0


PREDICTORS = ("exact", "noisy", "constant")


def make_predictor(name: str, gts=None, cfg: Optional[PipelineConfig] = None,
                   noise: Optional[NoiseSpec] = None) -> MaskPredictor:
    cfg = cfg or PipelineConfig()
    if name == "exact":
        return OracleExact(gts or [], cfg)
    if name == "noisy":
        return OracleNoisy(gts or [], cfg, noise or NoiseSpec())
    if name == "constant":
        return Constant()
    raise ValidationError(f"predictor must be one of {PREDICTORS}")
