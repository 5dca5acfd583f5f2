import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpgseg.core import PipelineConfig, ValidationError
from hpgseg.hpg import Group
from hpgseg.inference import (
    Prediction,
    nms,
    point_assignment,
    predictions_from_json,
    read_predictions,
    segment_scene,
    write_assignment,
    write_predictions,
)
from hpgseg.maskscore import MaskedInstance, make_predictor, set_iou
from hpgseg.synth import NoiseSpec, generate_scene, simulate_predictions

from oracles import greedy_nms


def _masked(idx, score, cls=0):
    idx = np.asarray(sorted(idx), dtype=np.int64)
    g = Group(idx if idx.size else [0], cls, 1)
    return MaskedInstance(g, np.ones(len(g)), idx, float(score))


def random_instances(rng, k=None, n=40):
    k = int(rng.integers(0, 15)) if k is None else k
    out = []
    for _ in range(k):
        size = int(rng.integers(0, 25))
        idx = rng.choice(n, size=size, replace=False)
        out.append(_masked(idx, round(float(rng.uniform()), 1)))
    return out


def test_suppresses_lower_score_overlap():
    a = _masked(range(10), 0.9)
    b = _masked(range(1, 10), 0.8)
    c = _masked(range(20, 25), 0.7)
    out = nms([b, a, c], 0.7)
    assert [p.confidence for p in out] == [0.9, 0.7]


def test_equal_iou_to_threshold_is_suppressed():
    a = _masked([0, 1, 2, 3], 0.9)
    b = _masked([0, 1, 2, 4, 5], 0.5)  # IoU 3/6 = 0.5
    assert len(nms([a, b], 0.5)) == 1
    assert len(nms([a, b], 0.51)) == 2


def test_ties_prefer_larger_then_lower_index():
    small = _masked([5, 6], 0.5)
    big = _masked([5, 6, 7], 0.5)
    out = nms([small, big], 0.5)
    assert out[0].point_indices.tolist() == [5, 6, 7]
    x = _masked([9], 0.5)
    y = _masked([1], 0.5)
    assert [p.point_indices[0] for p in nms([x, y], 0.5)] == [1, 9]


def test_empty_instances_dropped():
    assert nms([_masked([], 0.9)], 0.7) == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.3, 0.5, 0.7, 1.0]))
def test_nms_matches_reference_and_is_antichain(seed, thr):
    rng = np.random.default_rng(seed)
    inst = random_instances(rng)
    out = nms(inst, thr)
    ref = greedy_nms([(m.score, tuple(m.kept_indices.tolist())) for m in inst], thr)
    assert [p.point_indices.tolist() for p in out] == [inst[k].kept_indices.tolist() for k in ref]
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert set_iou(out[i].point_indices, out[j].point_indices) < thr
    again = nms([_masked(p.point_indices, p.confidence) for p in out], thr)
    assert [p.point_indices.tolist() for p in again] == [p.point_indices.tolist() for p in out]


def test_segment_scene_recovers_clean_scene(small_spec):
    cloud, gts = generate_scene(small_spec)
    pred = simulate_predictions(cloud, gts, NoiseSpec())
    stats = {}
    cfg = PipelineConfig()
    out = segment_scene(pred, make_predictor("exact", gts, cfg), cfg, stats=stats)
    assert sorted(p.point_indices.tolist() for p in out) == sorted(g.point_indices.tolist() for g in gts)
    assert set(stats["timings_ms"]) == {"shift", "group", "mask", "nms", "total"}
    assert len(stats["round_groups"]) == 3


def test_segment_scene_is_deterministic(small_spec):
    cloud, gts = generate_scene(small_spec)
    pred = simulate_predictions(cloud, gts, NoiseSpec(offset_sigma=0.02, seed=1))
    cfg = PipelineConfig()
    noise = NoiseSpec(mask_flip_rate=0.1, seed=4)
    runs = [segment_scene(pred, make_predictor("noisy", gts, cfg, noise), cfg) for _ in range(2)]
    assert json.dumps([p.to_json() for p in runs[0]]) == json.dumps([p.to_json() for p in runs[1]])


def test_predictions_round_trip(tmp_path):
    preds = [Prediction([1, 4, 7], 2, 0.75), Prediction([0], 0, 1.0)]
    path = tmp_path / "p.json"
    write_predictions(path, preds)
    back = read_predictions(path)
    assert [(p.point_indices.tolist(), p.semantic_class, p.confidence) for p in back] == \
        [([1, 4, 7], 2, 0.75), ([0], 0, 1.0)]


def test_predictions_from_json_reports_index():
    with pytest.raises(ValidationError, match=r"predictions\[1\]"):
        predictions_from_json([{"class": 0, "confidence": 1, "indices": [0]}, {"class": 0}])


def test_point_assignment_overlap_goes_to_first(tmp_path):
    preds = [Prediction([1, 2], 0, 0.9), Prediction([2, 3], 0, 0.5)]
    assert point_assignment(preds, 5).tolist() == [-1, 0, 0, 1, -1]
    write_assignment(tmp_path / "a.csv", preds, 5)
    assert (tmp_path / "a.csv").read_text().splitlines()[:3] == ["point,prediction", "0,-1", "1,0"]
