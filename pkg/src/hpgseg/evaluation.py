"""Instance segmentation metrics on point-index sets.

Predictions are ranked by confidence (stable for ties) and matched greedily,
each to the unmatched same-class ground truth with the highest IoU at or
above the threshold. AP is the area under the all-point interpolated
precision/recall curve. Scenes of a batch are matched separately and ranked
together.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GroundTruthInstance, InvariantError, ValidationError
from .inference import Prediction
from .maskscore import set_iou

__all__ = [
    "EvalReport",
    "AP_THRESHOLDS",
    "match_predictions",
    "average_precision",
    "evaluate",
    "evaluate_batch",
    "read_ground_truth",
    "write_ground_truth",
]

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
_ALL_THRESHOLDS = (0.25,) + AP_THRESHOLDS


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap25: float
    mprec50: float
    mrec50: float
    per_class: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = (self.ap, self.ap50, self.ap25, self.mprec50, self.mrec50)
        if any(not 0 <= v <= 1 for v in vals):
            raise InvariantError(f"metric outside [0, 1]: {vals}")
        if not (self.ap <= self.ap50 + 1e-12 and self.ap50 <= self.ap25 + 1e-12):
            raise InvariantError(
                f"expected ap <= ap50 <= ap25, got {self.ap}, {self.ap50}, {self.ap25}"
            )

    def to_json(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap25": self.ap25,
            "mprec50": self.mprec50,
            "mrec50": self.mrec50,
            "per_class": {
                str(c): {"ap": v[0], "ap50": v[1], "ap25": v[2]} for c, v in sorted(self.per_class.items())
            },
        }

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "ap", "ap50", "ap25"])
            for c, (ap, ap50, ap25) in sorted(self.per_class.items()):
                w.writerow([c, repr(ap), repr(ap50), repr(ap25)])


def _ranked(preds: Sequence[Prediction]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: -preds[i].confidence)


def _iou_table(preds, gts) -> np.ndarray:
    table = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            if p.semantic_class == g.semantic_class:
                table[i, j] = set_iou(p.point_indices, g.point_indices)
    return table


def _match(order, preds, gts, table, iou_t) -> list[Optional[int]]:
    """GT position matched by each ranked prediction, or None."""
    gt_rank = sorted(range(len(gts)), key=lambda j: gts[j].id)
    taken = np.zeros(len(gts), dtype=bool)
    out = []
    for i in order:
        best, best_iou = None, -1.0
        for j in gt_rank:  # ascending id, strict '>' keeps the lowest id on ties
            if taken[j] or gts[j].semantic_class != preds[i].semantic_class:
                continue
            if table[i, j] >= iou_t and table[i, j] > best_iou:
                best, best_iou = j, table[i, j]
        if best is not None:
            taken[best] = True
        out.append(best)
    return out


def match_predictions(preds: Sequence[Prediction], gts: Sequence[GroundTruthInstance],
                      iou_t: float) -> list[tuple[Prediction, Optional[GroundTruthInstance]]]:
    """Greedy confidence-ordered matching; returns pairs in ranked order."""
    if not 0 < iou_t <= 1:
        raise ValidationError("iou_t must lie in (0, 1]")
    order = _ranked(preds)
    matched = _match(order, preds, gts, _iou_table(preds, gts), iou_t)
    return [(preds[i], None if j is None else gts[j]) for i, j in zip(order, matched)]


def average_precision(matched: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP of ranked true/false-positive flags."""
    flags = np.asarray(matched, dtype=bool)
    if num_gt < 0:
        raise ValidationError("num_gt must be non-negative")
    if num_gt == 0:
        return 1.0 if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, flags.size + 1)
    recall = tp / num_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * envelope))


def evaluate_batch(scenes: Iterable[tuple[Sequence[Prediction], Sequence[GroundTruthInstance]]],
                   classes: Iterable[int]) -> EvalReport:
    classes = sorted(set(int(c) for c in classes))
    if not classes:
        raise ValidationError("at least one class is required")
    # ranked[c][t] -> list of (confidence, flag); counts per class
    ranked = {c: {t: [] for t in _ALL_THRESHOLDS} for c in classes}
    num_gt = dict.fromkeys(classes, 0)
    num_pred = dict.fromkeys(classes, 0)
    for preds, gts in scenes:
        preds = [p for p in preds if p.semantic_class in num_gt]
        gts = [g for g in gts if g.semantic_class in num_gt]
        for g in gts:
            num_gt[g.semantic_class] += 1
        for p in preds:
            num_pred[p.semantic_class] += 1
        order = _ranked(preds)
        table = _iou_table(preds, gts)
        for t in _ALL_THRESHOLDS:
            for i, j in zip(order, _match(order, preds, gts, table, t)):
                ranked[preds[i].semantic_class][t].append((preds[i].confidence, j is not None))

    per_class = {}
    prec, rec = [], []
    for c in classes:
        if num_gt[c] == 0 and num_pred[c] == 0:
            continue
        aps = {}
        for t in _ALL_THRESHOLDS:
            rows = sorted(ranked[c][t], key=lambda r: -r[0])  # stable across scenes
            aps[t] = average_precision([f for _, f in rows], num_gt[c])
        per_class[c] = (float(np.mean([aps[t] for t in AP_THRESHOLDS])), aps[0.5], aps[0.25])
        tp50 = sum(f for _, f in ranked[c][0.5])
        prec.append(tp50 / num_pred[c] if num_pred[c] else 0.0)
        rec.append(tp50 / num_gt[c] if num_gt[c] else 0.0)

    if not per_class:
        return EvalReport(1.0, 1.0, 1.0, 1.0, 1.0, {})
    vals = np.array(list(per_class.values()))
    return EvalReport(
        ap=float(vals[:, 0].mean()),
        ap50=float(vals[:, 1].mean()),
        ap25=float(vals[:, 2].mean()),
        mprec50=float(np.mean(prec)),
        mrec50=float(np.mean(rec)),
        per_class=per_class,
    )


def evaluate(preds: Sequence[Prediction], gts: Sequence[GroundTruthInstance],
             classes: Iterable[int]) -> EvalReport:
    return evaluate_batch([(preds, gts)], classes)


def write_ground_truth(path, gts: Sequence[GroundTruthInstance]) -> None:
    Path(path).write_text(json.dumps([g.to_json() for g in gts]) + "\n")


def read_ground_truth(path) -> list[GroundTruthInstance]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise ValidationError("ground truth: expected a JSON array")
    return [GroundTruthInstance.from_json(d) for d in doc]
