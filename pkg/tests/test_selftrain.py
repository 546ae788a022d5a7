import numpy as np
import pytest
from scipy import ndimage

from core.errors import TileSkipped
from core.selftrain import fit_tile, relabel_uncertain, stage2_pass
from core.synthetic import disk_map

NUCLEI = np.array([0.1, 0.1, 0.3])
BACKGROUND = np.array([0.9, 0.85, 0.9])


def _separated_tile(rng, size=40):
    pseudo = np.zeros((size, size), dtype=bool)
    pseudo[10:25, 8:30] = True
    colors = np.where(pseudo[..., None], NUCLEI, BACKGROUND) + rng.normal(0, 0.005, (size, size, 3))
    return colors, pseudo


@pytest.fixture
def dilated_suite(rng):
    """Planted disks, an H-like rendering and pseudo-labels dilated by 2 px."""
    truth = disk_map((100, 100), [(25, 25), (25, 72), (70, 40), (75, 80)], radius=10)
    fg = truth > 0
    colors = np.where(fg[..., None], NUCLEI, BACKGROUND) + rng.normal(0, 0.02, (100, 100, 3))
    rgb = np.clip(np.rint(colors * 255), 0, 255).astype(np.uint8)
    pseudo = ndimage.grey_dilation(truth, size=(5, 5))
    return rgb, truth, pseudo


def test_fit_recovers_class_means(rng):
    colors, pseudo = _separated_tile(rng)
    clf = fit_tile(colors, pseudo)
    np.testing.assert_allclose(clf.means[0], BACKGROUND, atol=0.01)
    np.testing.assert_allclose(clf.means[1], NUCLEI, atol=0.01)
    assert clf.priors.sum() == pytest.approx(1.0)


def test_posteriors_are_normalized(rng):
    colors, pseudo = _separated_tile(rng)
    post = fit_tile(colors, pseudo).posteriors(colors)
    np.testing.assert_allclose(post.sum(axis=1), 1.0)
    assert post.shape == (colors.shape[0] * colors.shape[1], 2)


def test_small_class_skips_tile(rng):
    colors, _ = _separated_tile(rng)
    pseudo = np.zeros(colors.shape[:2], dtype=bool)
    pseudo[0, :10] = True
    with pytest.raises(TileSkipped, match="nuclei"):
        fit_tile(colors, pseudo, min_class_pixels=50)


def test_confident_labels_are_kept(rng):
    colors, pseudo = _separated_tile(rng)
    clf = fit_tile(colors, pseudo)
    np.testing.assert_array_equal(relabel_uncertain(clf, colors, pseudo, tau_flip=0.9), pseudo)


def test_tau_one_is_identity(dilated_suite):
    rgb, _, pseudo = dilated_suite
    out, report = stage2_pass(pseudo, rgb, tile_size=50, tau_flip=1.0)
    np.testing.assert_array_equal(out, pseudo)
    assert report.flipped == 0


def test_relabel_improves_pixel_accuracy(dilated_suite):
    rgb, truth, pseudo = dilated_suite
    out, report = stage2_pass(pseudo, rgb, tile_size=200, tau_flip=0.9)
    before = np.mean((pseudo > 0) == (truth > 0))
    after = np.mean((out > 0) == (truth > 0))
    assert after > before
    assert report.flipped > 0
    assert sum(t.fg_to_bg for t in report.tiles) > 0


def test_interior_of_large_nuclei_is_unchanged(dilated_suite):
    rgb, truth, pseudo = dilated_suite
    out, _ = stage2_pass(pseudo, rgb, tile_size=200, tau_flip=0.9)
    interior = ndimage.binary_erosion(truth > 0, iterations=2)
    assert (out[interior] > 0).all()


def test_skipped_tiles_keep_pseudo_labels(dilated_suite):
    rgb, _, pseudo = dilated_suite
    out, report = stage2_pass(pseudo, rgb, tile_size=200, min_class_pixels=10**6)
    assert report.skipped == len(report.tiles)
    np.testing.assert_array_equal(out, pseudo)


def test_worker_count_does_not_change_result(dilated_suite):
    rgb, _, pseudo = dilated_suite
    one, _ = stage2_pass(pseudo, rgb, tile_size=50, workers=1)
    four, _ = stage2_pass(pseudo, rgb, tile_size=50, workers=4)
    np.testing.assert_array_equal(one, four)
