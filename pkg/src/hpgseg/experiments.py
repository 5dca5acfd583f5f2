"""Batch runs behind the ``ablate`` and ``bench`` commands."""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .core import PipelineConfig
from .evaluation import evaluate_batch
from .inference import segment_scene
from .maskscore import make_predictor
from .synth import NoiseSpec, SceneSpec, generate_scene, scene_for_size, simulate_predictions

__all__ = [
    "DEFAULT_RADII_SETS",
    "ABLATION_COLUMNS",
    "BENCH_COLUMNS",
    "prepare_batch",
    "run_batch",
    "run_ablation",
    "run_bench",
]

DEFAULT_RADII_SETS = ((0.01,), (0.03,), (0.05,), (0.01, 0.03), (0.01, 0.03, 0.05))

ABLATION_COLUMNS = (
    "radii", "offset_sigma", "semantic_flip_rate", "mask_flip_rate", "predictor",
    "scenes", "ap", "ap50", "ap25", "mprec50", "mrec50",
)
BENCH_COLUMNS = (
    "n_points", "repeat", "shift_ms", "group_ms", "mask_ms", "nms_ms", "total_ms",
    "peak_groups", "proposals", "predictions",
)


def prepare_batch(specs: Sequence[SceneSpec], noise: NoiseSpec) -> list:
    """Generate every scene and simulate predictions; scene i uses ``noise.seed + i``."""
    batch = []
    for i, spec in enumerate(specs):
        cloud, gts = generate_scene(spec)
        pred = simulate_predictions(cloud, gts, dataclasses.replace(noise, seed=noise.seed + i))
        batch.append((pred, gts))
    return batch


def run_batch(batch, cfg: PipelineConfig, predictor: str = "exact", noise: NoiseSpec = NoiseSpec()):
    """Segment and evaluate a prepared batch; returns the pooled EvalReport."""
    classes = set()
    scenes = []
    for cloud, gts in batch:
        pred = make_predictor(predictor, gts, cfg, noise)
        scenes.append((segment_scene(cloud, pred, cfg), gts))
        classes.update(g.semantic_class for g in gts)
    return evaluate_batch(scenes, classes)


def run_ablation(specs: Sequence[SceneSpec], noises: Sequence[NoiseSpec], base: PipelineConfig,
                 radii_sets=DEFAULT_RADII_SETS, predictor: str = "exact") -> list[dict]:
    rows = []
    for noise in noises:
        batch = prepare_batch(specs, noise)
        for radii in radii_sets:
            cfg = dataclasses.replace(base, radii=tuple(radii))
            rep = run_batch(batch, cfg, predictor, noise)
            rows.append({
                "radii": ";".join(repr(float(r)) for r in cfg.radii),
                "offset_sigma": noise.offset_sigma,
                "semantic_flip_rate": noise.semantic_flip_rate,
                "mask_flip_rate": noise.mask_flip_rate,
                "predictor": predictor,
                "scenes": len(specs),
                "ap": rep.ap,
                "ap50": rep.ap50,
                "ap25": rep.ap25,
                "mprec50": rep.mprec50,
                "mrec50": rep.mrec50,
            })
    return rows


def run_bench(sizes: Sequence[int], cfg: PipelineConfig, repeats: int = 1,
              noise: NoiseSpec = NoiseSpec(offset_sigma=0.01)) -> list[dict]:
    rows = []
    for n in sizes:
        for rep in range(repeats):
            cloud, gts = scene_for_size(int(n), seed=rep)
            cloud = simulate_predictions(cloud, gts, dataclasses.replace(noise, seed=noise.seed + rep))
            stats: dict = {}
            segment_scene(cloud, make_predictor("exact", gts, cfg), cfg, stats=stats)
            t = stats["timings_ms"]
            rows.append({
                "n_points": int(n),
                "repeat": rep,
                "shift_ms": t["shift"],
                "group_ms": t["group"],
                "mask_ms": t["mask"],
                "nms_ms": t["nms"],
                "total_ms": t["total"],
                "peak_groups": int(np.max(stats["round_groups"])),
                "proposals": stats["proposals"],
                "predictions": stats["predictions"],
            })
    return rows
