import numpy as np
import pytest
from skimage.draw import disk

from core.errors import ContractError
from core.fp_filter import (
    QUERY, REFERENCE, InstanceFeatures, aggregate_reference, assign_sets, build_tile_grid,
    instance_features, score_and_filter, similarity,
)

PINK = (236, 188, 214)
PURPLE = (80, 40, 150)
WASHED = (170, 165, 170)


@pytest.fixture
def blob_tile():
    """Three saturated nuclei of growing size plus one small washed-out blob."""
    rgb = np.empty((120, 120, 3), dtype=np.uint8)
    rgb[:] = PINK
    labels = np.zeros((120, 120), dtype=np.int32)
    for inst_id, (center, radius, color) in enumerate([
        ((25, 25), 12, PURPLE),
        ((25, 85), 13, PURPLE),
        ((85, 30), 14, PURPLE),
        ((90, 90), 5, WASHED),
    ], start=1):
        rr, cc = disk(center, radius, shape=labels.shape)
        labels[rr, cc] = inst_id
        rgb[rr, cc] = color
    return rgb, labels


# ─── Kernel ──────────────────────────────────────────────

def test_similarity_of_identical_vectors_is_one():
    x = InstanceFeatures(0.7, 0.5, 0.4, 0.2)
    assert similarity(x, x, gamma=0.1) == 1.0


def test_similarity_at_squared_distance_ten():
    a = np.zeros(4)
    b = np.array([np.sqrt(10.0), 0.0, 0.0, 0.0])
    assert similarity(a, b, gamma=0.1) == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_similarity_rejects_non_positive_gamma():
    with pytest.raises(ContractError):
        similarity(np.zeros(4), np.ones(4), gamma=0.0)


# ─── Features / sets ─────────────────────────────────────

def test_features_lie_in_unit_range(blob_tile):
    rgb, labels = blob_tile
    features = instance_features(rgb, labels, ring_width=2)
    assert sorted(features) == [1, 2, 3, 4]
    for f in features.values():
        assert np.all((f.as_array() >= 0) & (f.as_array() <= 1))
    assert features[4].mean_s < 0.1 < features[1].mean_s


def test_assign_sets_is_strictly_greater():
    reference, query = assign_sets({1: 100, 2: 50, 3: 20}, size_threshold=50)
    assert reference == {1}
    assert query == {2, 3}


def test_aggregate_reference_is_componentwise_mean():
    agg = aggregate_reference([InstanceFeatures(0.2, 0.4, 0.6, 0.0), InstanceFeatures(0.4, 0.6, 0.8, 1.0)])
    np.testing.assert_allclose(agg.as_array(), [0.3, 0.5, 0.7, 0.5])


def test_aggregate_reference_needs_members():
    with pytest.raises(ContractError):
        aggregate_reference([])


def test_tile_grid_assigns_by_centroid(blob_tile):
    _, labels = blob_tile
    grid = build_tile_grid(labels, tile_size=60)
    assert grid.assignment == {0: [1], 1: [2], 2: [3], 3: [4]}


# ─── Filtering ───────────────────────────────────────────

def test_washed_out_blob_is_removed(blob_tile):
    rgb, labels = blob_tile
    out, decisions = score_and_filter(labels, rgb, tile_size=200, t_s=0.6, gamma=0.1)
    assert not (out == 4).any()
    for inst_id in (1, 2, 3):
        np.testing.assert_array_equal(out == inst_id, labels == inst_id)

    by_id = {d.instance_id: d for d in decisions}
    assert by_id[4].membership == QUERY and by_id[4].removed
    assert by_id[4].score < 0.6
    assert by_id[1].membership == QUERY and not by_id[1].removed
    assert {by_id[2].membership, by_id[3].membership} == {REFERENCE}


def test_removals_grow_with_threshold(blob_tile):
    rgb, labels = blob_tile
    removed = []
    for t_s in (0.01, 0.3, 0.6, 0.9, 0.999):
        _, decisions = score_and_filter(labels, rgb, t_s=t_s)
        removed.append({d.instance_id for d in decisions if d.removed})
    for smaller, larger in zip(removed, removed[1:]):
        assert smaller <= larger


def test_tile_without_enough_references_is_untouched(blob_tile):
    rgb, labels = blob_tile
    out, decisions = score_and_filter(labels, rgb, min_reference_count=3)
    np.testing.assert_array_equal(out, labels)
    assert all(d.score is None for d in decisions)


def test_filter_never_adds_instances(planted):
    rgb, truth = planted
    out, _ = score_and_filter(truth, rgb)
    kept = set(np.unique(out)) - {0}
    assert kept <= set(np.unique(truth)) - {0}
    assert np.all((out == 0) | (out == truth))


def test_empty_map_passes_through():
    labels = np.zeros((30, 30), dtype=np.int32)
    out, decisions = score_and_filter(labels, np.full((30, 30, 3), 200, dtype=np.uint8))
    assert not out.any()
    assert decisions == []


def test_worker_count_does_not_change_result(planted):
    rgb, truth = planted
    one, d1 = score_and_filter(truth, rgb, tile_size=60, workers=1)
    four, d4 = score_and_filter(truth, rgb, tile_size=60, workers=4)
    np.testing.assert_array_equal(one, four)
    assert d1 == d4
