import numpy as np
import pytest
from scipy.spatial import cKDTree

from hpgseg.core import ValidationError
from hpgseg.synth import (
    NoiseSpec,
    SceneSpec,
    generate_scene,
    parse_batch_spec,
    sample_surface,
    scene_for_size,
    simulate_predictions,
)


@pytest.mark.parametrize("shape", ["box", "sphere"])
def test_min_gap_between_instances(shape):
    spec = SceneSpec(num_instances=6, shape=shape, instance_extent=(0.15, 0.25), min_gap=0.07,
                     intra_spacing=0.01, bounds=((0, 0, 0), (1.5, 1.5, 0.6)), seed=3)
    cloud, gts = generate_scene(spec)
    trees = [cKDTree(cloud.positions[g.point_indices]) for g in gts]
    for i in range(len(gts)):
        for j in range(i + 1, len(gts)):
            d, _ = trees[j].query(cloud.positions[gts[i].point_indices])
            assert d.min() >= spec.min_gap


@pytest.mark.parametrize("shape", ["box", "sphere"])
def test_surface_spacing_is_respected(shape):
    spacing = 0.01
    pts = sample_surface(shape, np.array([0.2, 0.3, 0.25]) if shape == "box" else np.full(3, 0.2), spacing)
    d, _ = cKDTree(pts).query(pts, k=2)
    assert d[:, 1].max() <= spacing * (1 + 1e-9)


def test_scene_is_seeded():
    a, _ = generate_scene(SceneSpec(num_instances=3, seed=4))
    b, _ = generate_scene(SceneSpec(num_instances=3, seed=4))
    c, _ = generate_scene(SceneSpec(num_instances=3, seed=5))
    assert a.equals(b) and not a.equals(c)


def test_gt_matches_cloud_columns(small_spec):
    cloud, gts = generate_scene(small_spec)
    for g in gts:
        assert np.all(cloud.gt_instance_ids[g.point_indices] == g.id)
        assert np.all(cloud.semantic_labels[g.point_indices] == g.semantic_class)
        np.testing.assert_allclose(g.centroid, cloud.positions[g.point_indices].mean(axis=0))


def test_infeasible_packing_is_reported():
    spec = SceneSpec(num_instances=50, instance_extent=(0.4, 0.4), min_gap=0.3,
                     bounds=((0, 0, 0), (1, 1, 1)))
    with pytest.raises(ValidationError, match="infeasible"):
        generate_scene(spec)


def test_offset_noise_statistics(small_spec):
    cloud, gts = generate_scene(small_spec)
    clean = simulate_predictions(cloud, gts, NoiseSpec())
    noisy = simulate_predictions(cloud, gts, NoiseSpec(offset_sigma=0.05, seed=2))
    resid = noisy.offsets - clean.offsets
    assert abs(resid.std() - 0.05) / 0.05 < 0.05
    shifted = clean.positions + clean.offsets
    for g in gts:
        np.testing.assert_allclose(shifted[g.point_indices], np.broadcast_to(g.centroid, (len(g.point_indices), 3)),
                                   atol=1e-12)


def test_semantic_flip_rate(small_spec):
    cloud, gts = generate_scene(small_spec)
    out = simulate_predictions(cloud, gts, NoiseSpec(semantic_flip_rate=0.3, seed=1), num_classes=4)
    rate = np.mean(out.semantic_labels != cloud.semantic_labels)
    assert abs(rate - 0.3) < 0.03
    assert np.array_equal(out.semantic_scores.argmax(axis=1), out.semantic_labels)


def test_flip_rate_one_rejected():
    with pytest.raises(ValidationError, match="semantic_flip_rate"):
        NoiseSpec(semantic_flip_rate=1.0)


def test_batch_spec_errors_name_the_field():
    with pytest.raises(ValidationError, match=r"scene\.min_gap"):
        parse_batch_spec({"scene": {"min_gap": -1}})
    with pytest.raises(ValidationError, match=r"spec\.scenes\[0\]\.count"):
        parse_batch_spec({"scenes": [{"count": 0}]})


def test_batch_spec_seeds_increment():
    specs, _ = parse_batch_spec({"scenes": [{"seed": 10, "count": 2}, {"seed": 0, "intra_spacing": 0.02}]})
    assert [s.seed for s in specs] == [10, 11, 0]
    assert specs[2].intra_spacing == 0.02


def test_scene_for_size_exact_count():
    cloud, gts = scene_for_size(12_345, seed=1)
    assert len(cloud) == 12_345
    assert sum(len(g.point_indices) for g in gts) == 12_345
