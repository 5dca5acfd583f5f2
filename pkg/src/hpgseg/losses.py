"""Numeric evaluators for the training losses.

These are plain forward computations (no gradients). Means over instances
and groups are unweighted: each instance or group contributes equally
regardless of its point count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GroundTruthInstance, ValidationError

__all__ = [
    "LossReport",
    "semantic_loss",
    "offset_loss",
    "direction_loss",
    "mask_loss",
    "score_loss",
    "total_loss",
    "PROB_EPS",
    "DIR_EPS",
]

PROB_EPS = 1e-12
DIR_EPS = 1e-8


@dataclass(frozen=True)
class LossReport:
    sem: float
    off: float
    dir: float
    mask: float
    score: float

    @property
    def total(self) -> float:
        return total_loss(self.sem, self.off, self.dir, self.mask, self.score)

    def to_json(self) -> dict:
        return {"sem": self.sem, "off": self.off, "dir": self.dir, "mask": self.mask,
                "score": self.score, "total": self.total}


def semantic_loss(scores, gt_labels) -> float:
    """Mean cross-entropy of softmax(scores) against integer labels."""
    b = np.asarray(scores, dtype=np.float64)
    y = np.asarray(gt_labels, dtype=np.int64)
    if b.ndim != 2 or y.shape != (b.shape[0],):
        raise ValidationError("scores must be (N, C) with one label per row")
    if b.shape[0] == 0:
        raise ValidationError("semantic_loss needs at least one point")
    C = b.shape[1]
    if y.min() < 0 or y.max() >= C:
        raise ValidationError(f"label out of range [0, {C})")
    top = b.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(b - top).sum(axis=1))
    return float(np.mean(lse - b[np.arange(b.shape[0]), y]))


def _instance_vectors(offsets, positions, gts):
    if not gts:
        raise ValidationError("at least one ground-truth instance is required")
    d = np.asarray(offsets, dtype=np.float64)
    mu = np.asarray(positions, dtype=np.float64)
    if d.shape != mu.shape:
        raise ValidationError("offsets and positions must have the same shape")
    n = mu.shape[0]
    for g in gts:
        if g.point_indices.max() >= n:
            raise ValidationError(f"instance {g.id} references a point outside the cloud")
        idx = g.point_indices
        yield d[idx], g.centroid - mu[idx]


def offset_loss(offsets, positions, gts: Sequence[GroundTruthInstance]) -> float:
    """Mean over instances of the mean Euclidean distance from shifted point to centroid."""
    per = [np.mean(np.linalg.norm(di - to_c, axis=1)) for di, to_c in _instance_vectors(offsets, positions, gts)]
    return float(np.mean(per))


def direction_loss(offsets, positions, gts: Sequence[GroundTruthInstance]) -> float:
    """Negative mean cosine between offsets and the true point-to-centroid direction.

    Points whose offset or true direction is shorter than ``DIR_EPS`` are
    skipped; an instance with no remaining point is skipped too. Returns 0
    when nothing remains.
    """
    per = []
    for di, to_c in _instance_vectors(offsets, positions, gts):
        nd = np.linalg.norm(di, axis=1)
        nc = np.linalg.norm(to_c, axis=1)
        ok = (nd >= DIR_EPS) & (nc >= DIR_EPS)
        if not ok.any():
            continue
        cos = np.sum(di[ok] * to_c[ok], axis=1) / (nd[ok] * nc[ok])
        per.append(np.mean(cos))
    if not per:
        return 0.0
    return float(-np.mean(per))


def _bce(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_EPS, 1 - PROB_EPS)
    return -(t * np.log(p) + (1 - t) * np.log1p(-p))


def mask_loss(masks: Sequence, gt_masks: Sequence) -> float:
    """Binary cross-entropy averaged within each group, then over groups."""
    if len(masks) != len(gt_masks):
        raise ValidationError("shape mismatch: different numbers of predicted and target masks")
    if not masks:
        raise ValidationError("mask_loss needs at least one group")
    per = []
    for k, (m, t) in enumerate(zip(masks, gt_masks)):
        m = np.asarray(m, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if m.shape != t.shape or m.ndim != 1 or m.size == 0:
            raise ValidationError(f"shape mismatch in group {k}: {m.shape} vs {t.shape}")
        per.append(np.mean(_bce(m, t)))
    return float(np.mean(per))


def score_loss(scores, gt_scores) -> float:
    """Binary cross-entropy between predicted and target group scores."""
    e = np.asarray(scores, dtype=np.float64)
    t = np.asarray(gt_scores, dtype=np.float64)
    if e.shape != t.shape or e.ndim != 1:
        raise ValidationError("length mismatch between scores and targets")
    if e.size == 0:
        raise ValidationError("score_loss needs at least one group")
    return float(np.mean(_bce(e, t)))


def total_loss(sem: float, off: float, dir: float, mask: float, score: float) -> float:
    parts = (sem, off, dir, mask, score)
    if not all(math.isfinite(p) for p in parts):
        raise ValidationError("loss terms must be finite")
    return sem + off + dir + mask + score
