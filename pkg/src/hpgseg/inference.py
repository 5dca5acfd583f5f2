"""Scene segmentation: grouping, per-group masking and scoring, then NMS."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import PipelineConfig, PointCloud, ValidationError, shift_points
from .hpg import hierarchical_group
from .maskscore import MaskedInstance, MaskPredictor, apply_mask, mask_pool, set_iou

__all__ = [
    "Prediction",
    "nms",
    "segment_scene",
    "predictions_to_json",
    "predictions_from_json",
    "write_predictions",
    "read_predictions",
    "write_assignment",
    "point_assignment",
]


@dataclass(frozen=True, eq=False)
class Prediction:
    point_indices: np.ndarray
    semantic_class: int
    confidence: float

    def __post_init__(self):
        idx = np.array(self.point_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValidationError("prediction must contain at least one point")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValidationError("prediction indices must be strictly ascending")
        idx.setflags(write=False)
        object.__setattr__(self, "point_indices", idx)
        object.__setattr__(self, "semantic_class", int(self.semantic_class))
        object.__setattr__(self, "confidence", float(self.confidence))

    def to_json(self) -> dict:
        return {
            "class": self.semantic_class,
            "confidence": self.confidence,
            "indices": self.point_indices.tolist(),
        }


def _nms_order(instances: Sequence[MaskedInstance]) -> list[int]:
    live = [i for i, m in enumerate(instances) if m.kept_indices.size]
    return sorted(
        live,
        key=lambda i: (-instances[i].score, -instances[i].kept_indices.size, int(instances[i].kept_indices[0])),
    )


def nms(instances: Sequence[MaskedInstance], iou_threshold: float) -> list[Prediction]:
    """Greedy suppression by point-set IoU of the masked (kept) points.

    Highest score first; equal scores prefer the larger set, then the lower
    smallest index. An instance survives only if its IoU with every survivor
    so far is below ``iou_threshold``. Empty instances are dropped.
    """
    if not 0 < iou_threshold <= 1:
        raise ValidationError("iou_threshold must lie in (0, 1]")
    kept: list[MaskedInstance] = []
    for i in _nms_order(instances):
        cand = instances[i]
        if all(set_iou(cand.kept_indices, k.kept_indices) < iou_threshold for k in kept):
            kept.append(cand)
    return [Prediction(m.kept_indices, m.group.semantic_class, m.score) for m in kept]


def segment_scene(cloud: PointCloud, predictor: MaskPredictor, cfg: PipelineConfig,
                  stats: Optional[dict] = None) -> list[Prediction]:
    """Shift, group, mask and score each group, then suppress duplicates.

    When the cloud has no feature columns the positions serve as features.
    ``stats``, if given, receives stage timings in milliseconds and group counts.
    """
    t0 = time.perf_counter()
    shifted = shift_points(cloud) if cfg.cluster_space == "shifted" else None
    t1 = time.perf_counter()
    grouping = hierarchical_group(cloud, shifted, cfg)
    t2 = time.perf_counter()
    features = cloud.features if cloud.features is not None else cloud.positions
    masked = []
    for g in grouping.merged:
        rows = features[g.point_indices]
        probs, score = predictor.predict(g, rows, cloud)
        masked.append(apply_mask(g, probs, score, cfg, pooled_feature=mask_pool(rows, probs)))
    t3 = time.perf_counter()
    preds = nms(masked, cfg.nms_iou)
    t4 = time.perf_counter()
    if stats is not None:
        stats["timings_ms"] = {
            "shift": 1e3 * (t1 - t0),
            "group": 1e3 * (t2 - t1),
            "mask": 1e3 * (t3 - t2),
            "nms": 1e3 * (t4 - t3),
            "total": 1e3 * (t4 - t0),
        }
        stats["round_groups"] = grouping.group_counts()
        stats["proposals"] = len(grouping.merged)
        stats["predictions"] = len(preds)
    return preds


def predictions_to_json(preds: Sequence[Prediction]) -> list:
    return [p.to_json() for p in preds]


def predictions_from_json(doc) -> list[Prediction]:
    if not isinstance(doc, list):
        raise ValidationError("predictions: expected a JSON array")
    out = []
    for k, d in enumerate(doc):
        try:
            out.append(Prediction(d["indices"], d["class"], d["confidence"]))
        except (KeyError, TypeError):
            raise ValidationError(f"predictions[{k}]: needs class, confidence and indices") from None
    return out


def write_predictions(path, preds: Sequence[Prediction]) -> None:
    Path(path).write_text(json.dumps(predictions_to_json(preds)) + "\n")


def read_predictions(path) -> list[Prediction]:
    return predictions_from_json(json.loads(Path(path).read_text()))


def point_assignment(preds: Sequence[Prediction], num_points: int) -> np.ndarray:
    """Prediction id per point, -1 if none. Overlaps go to the earlier
    (higher-confidence) prediction."""
    out = np.full(num_points, -1, dtype=np.int64)
    for pid in range(len(preds) - 1, -1, -1):
        idx = preds[pid].point_indices
        if idx.size and idx[-1] >= num_points:
            raise ValidationError(f"prediction {pid} references a point outside the cloud")
        out[idx] = pid
    return out


def write_assignment(path, preds: Sequence[Prediction], num_points: int) -> None:
    assign = point_assignment(preds, num_points)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "prediction"])
        w.writerows(zip(range(num_points), assign.tolist()))
