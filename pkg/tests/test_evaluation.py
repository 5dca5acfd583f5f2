import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpgseg.core import GroundTruthInstance, InvariantError
from hpgseg.evaluation import (
    AP_THRESHOLDS,
    EvalReport,
    average_precision,
    evaluate,
    evaluate_batch,
    match_predictions,
    read_ground_truth,
    write_ground_truth,
)
from hpgseg.inference import Prediction

from oracles import ap_all_point, reference_eval


def _gt(i, cls, idx):
    return GroundTruthInstance(i, cls, sorted(idx), np.zeros(3))


def test_hand_case_five_sixths():
    assert abs(average_precision([True, False, True], 2) - 5 / 6) < 1e-9


@pytest.mark.parametrize("flags,n,expected", [
    ([], 3, 0.0), ([], 0, 1.0), ([False], 0, 0.0),
    ([True, True], 2, 1.0), ([False, True], 1, 0.5), ([True], 4, 0.25),
])
def test_ap_edge_cases(flags, n, expected):
    assert average_precision(flags, n) == pytest.approx(expected)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), max_size=30), st.integers(0, 5))
def test_ap_matches_loop_oracle(flags, extra):
    n = sum(flags) + extra
    assert average_precision(flags, n) == pytest.approx(ap_all_point(flags, n), abs=1e-12)


def test_matching_prefers_highest_iou_then_lowest_id():
    gts = [_gt(5, 0, [0, 1, 2, 3]), _gt(2, 0, [4, 5, 6, 7])]
    p = Prediction([0, 1, 2, 3, 4, 5, 6, 7], 0, 0.9)
    [(pred, gt)] = match_predictions([p], gts, 0.5)
    assert gt.id == 2


def test_each_gt_matched_once():
    gts = [_gt(0, 0, range(10))]
    preds = [Prediction(range(10), 0, 0.9), Prediction(range(10), 0, 0.8)]
    pairs = match_predictions(preds, gts, 0.5)
    assert [g is not None for _, g in pairs] == [True, False]


def test_class_mismatch_never_matches():
    rep = evaluate([Prediction(range(5), 1, 1.0)], [_gt(0, 0, range(5))], [0, 1])
    assert rep.ap50 == 0.0


def test_perfect_predictions_score_one():
    gts = [_gt(0, 0, range(5)), _gt(1, 1, range(5, 9))]
    preds = [Prediction(g.point_indices, g.semantic_class, 0.5) for g in gts]
    rep = evaluate(preds, gts, [0, 1])
    assert (rep.ap, rep.ap50, rep.ap25, rep.mprec50, rep.mrec50) == (1, 1, 1, 1, 1)


def test_absent_class_is_excluded():
    gts = [_gt(0, 0, range(5))]
    rep = evaluate([Prediction(range(5), 0, 0.5)], gts, [0, 7])
    assert rep.ap50 == 1.0 and set(rep.per_class) == {0}


def test_report_invariant_enforced():
    with pytest.raises(InvariantError):
        EvalReport(ap=0.6, ap50=0.5, ap25=0.7, mprec50=0, mrec50=0)


def _random_case(rng, n=80):
    gts, start = [], 0
    for i in range(int(rng.integers(1, 6))):
        size = int(rng.integers(3, 12))
        gts.append(_gt(i, int(rng.integers(0, 2)), range(start, start + size)))
        start += size
    preds = []
    for _ in range(int(rng.integers(0, 8))):
        idx = np.unique(rng.choice(start, size=int(rng.integers(1, 15))))
        preds.append(Prediction(idx, int(rng.integers(0, 2)), float(rng.uniform())))
    return preds, gts


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_matches_reference_evaluator_and_is_monotone(seed):
    rng = np.random.default_rng(seed)
    preds, gts = _random_case(rng)
    rep = evaluate(preds, gts, [0, 1])
    assert rep.ap <= rep.ap50 <= rep.ap25
    p_tuples = [(p.semantic_class, p.confidence, p.point_indices.tolist()) for p in preds]
    g_tuples = [(g.id, g.semantic_class, g.point_indices.tolist()) for g in gts]
    for t, col in ((0.5, 1), (0.25, 2)):
        ref = reference_eval(p_tuples, g_tuples, t)
        for c, v in ref.items():
            assert rep.per_class[c][col] == pytest.approx(v, abs=1e-12)
    per_t = [reference_eval(p_tuples, g_tuples, t) for t in AP_THRESHOLDS]
    for c in rep.per_class:
        assert rep.per_class[c][0] == pytest.approx(np.mean([r[c] for r in per_t]), abs=1e-12)


def test_batch_pools_across_scenes():
    a = ([Prediction([0, 1], 0, 0.9)], [_gt(0, 0, [0, 1])])
    b = ([Prediction([0, 1], 0, 0.8)], [_gt(0, 0, [5, 6])])
    rep = evaluate_batch([a, b], [0])
    assert rep.ap50 == pytest.approx(0.5)
    assert rep.mprec50 == pytest.approx(0.5)


def test_gt_file_round_trip(tmp_path):
    gts = [_gt(3, 1, [0, 2]), _gt(4, 0, [1])]
    write_ground_truth(tmp_path / "gt.json", gts)
    back = read_ground_truth(tmp_path / "gt.json")
    assert [(g.id, g.semantic_class, g.point_indices.tolist()) for g in back] == [(3, 1, [0, 2]), (4, 0, [1])]
