import math

import numpy as np
import pytest

from hpgseg.core import GroundTruthInstance, ValidationError
from hpgseg.losses import (
    LossReport,
    direction_loss,
    mask_loss,
    offset_loss,
    score_loss,
    semantic_loss,
    total_loss,
)


def _instances(rng, n=30, k=3):
    pos = rng.normal(size=(n, 3))
    ids = np.arange(n) % k
    gts = [GroundTruthInstance.from_points(i, 0, np.flatnonzero(ids == i), pos) for i in range(k)]
    perfect = np.empty_like(pos)
    for g in gts:
        perfect[g.point_indices] = g.centroid - pos[g.point_indices]
    return pos, gts, perfect


def test_semantic_uniform_is_ln_c():
    assert abs(semantic_loss(np.zeros((5, 3)), [0, 1, 2, 0, 1]) - math.log(3)) < 1e-9


def test_semantic_matches_scalar_formula():
    b = np.array([[1.0, 2.0, 0.5]])
    expected = -math.log(math.exp(2.0) / sum(math.exp(v) for v in b[0]))
    assert semantic_loss(b, [1]) == pytest.approx(expected, rel=1e-12)


def test_semantic_is_stable_for_large_logits():
    assert semantic_loss(np.array([[1000.0, 0.0]]), [0]) == pytest.approx(0.0, abs=1e-12)
    assert semantic_loss(np.array([[1000.0, 0.0]]), [1]) == pytest.approx(1000.0)


def test_semantic_label_out_of_range():
    with pytest.raises(ValidationError, match="out of range"):
        semantic_loss(np.zeros((2, 3)), [0, 3])


def test_mask_half_is_ln2():
    assert abs(mask_loss([np.full(4, 0.5), np.full(2, 0.5)], [[1, 0, 1, 0], [1, 1]]) - math.log(2)) < 1e-9


def test_mask_loss_clips_hard_zeros():
    v = mask_loss([np.array([0.0])], [np.array([1.0])])
    assert math.isfinite(v) and v == pytest.approx(-math.log(1e-12))


def test_mask_shape_mismatch():
    with pytest.raises(ValidationError, match="shape mismatch"):
        mask_loss([np.zeros(3)], [np.zeros(2)])


def test_perfect_offsets():
    pos, gts, perfect = _instances(np.random.default_rng(0))
    assert offset_loss(perfect, pos, gts) == 0.0
    assert abs(direction_loss(perfect, pos, gts) + 1.0) < 1e-9


def test_offset_uses_euclidean_norm():
    pos = np.zeros((1, 3))
    g = GroundTruthInstance(0, 0, [0], [0.0, 0.0, 0.0])
    assert offset_loss(np.array([[3.0, 4.0, 0.0]]), pos, [g]) == 5.0


def test_direction_opposite_is_plus_one():
    pos, gts, perfect = _instances(np.random.default_rng(1))
    assert direction_loss(-perfect, pos, gts) == pytest.approx(1.0, abs=1e-9)


def test_direction_skips_zero_offsets():
    pos = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    g = GroundTruthInstance(0, 0, [0, 1], [0.5, 0, 0])
    off = np.array([[0.0, 0, 0], [-0.5, 0, 0]])
    assert direction_loss(off, pos, [g]) == pytest.approx(-1.0)
    assert direction_loss(np.zeros((2, 3)), pos, [g]) == 0.0


def test_score_loss_bce():
    assert score_loss([0.5], [1.0]) == pytest.approx(math.log(2))
    assert score_loss([0.9, 0.2], [1.0, 0.0]) == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2)


def test_total_is_exact_sum():
    parts = (0.1, 0.2, -0.7, 0.3, 0.05)
    assert total_loss(*parts) == 0.1 + 0.2 + -0.7 + 0.3 + 0.05
    assert LossReport(*parts).total == total_loss(*parts)
    with pytest.raises(ValidationError, match="finite"):
        total_loss(0, 0, 0, float("nan"), 0)
