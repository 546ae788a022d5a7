from dataclasses import replace

import numpy as np
import pytest

from core.errors import ConfigError
from core.settings import PipelineConfig
from core.stain import (
    deconvolve_h, enhance_contrast, lab_lightness, make_stain_matrix, optical_density,
    recolor, stain_concentrations,
)

STAINS = PipelineConfig().stains


def _pure_h(conc):
    """RGB pixel carrying `conc` units of H and nothing else."""
    od = conc * STAINS[:, 0]
    return 256.0 * np.exp(-od) - 1.0


def test_white_has_zero_density():
    white = np.full((2, 2, 3), 255, dtype=np.uint8)
    np.testing.assert_allclose(optical_density(white), 0.0, atol=1e-12)


def test_pure_h_pixel_deconvolves_to_h_only():
    rgb = _pure_h(0.8)[None, None, :]
    conc = stain_concentrations(rgb, STAINS)[0, 0]
    assert conc[0] == pytest.approx(0.8, abs=1e-9)
    assert conc[1] == pytest.approx(0.0, abs=1e-9)
    assert conc[2] == pytest.approx(0.0, abs=1e-9)


def test_h_intensity_orders_by_stain_amount():
    rgb = np.stack([_pure_h(c) for c in (0.1, 0.5, 1.0)])[None].round().astype(np.uint8)
    himg = deconvolve_h(rgb, STAINS)
    assert himg.intensity.dtype == np.uint8
    assert himg.intensity[0, 2] == 255
    assert himg.intensity[0, 0] < himg.intensity[0, 1] < himg.intensity[0, 2]


def test_white_image_has_no_h():
    himg = deconvolve_h(np.full((4, 4, 3), 255, dtype=np.uint8), STAINS)
    assert not himg.intensity.any()
    assert (himg.rgb == 255).all()
    assert himg.scale == 0.0


def test_recolor_of_zero_is_white():
    out = recolor(np.zeros((3, 3), dtype=np.uint8), 1.5, STAINS[:, 0])
    assert (out == 255).all()


def test_recolored_pixels_are_darker_with_more_h():
    himg = deconvolve_h(np.stack([_pure_h(0.3), _pure_h(0.9)])[None].round().astype(np.uint8), STAINS)
    assert (himg.rgb[0, 1] <= himg.rgb[0, 0]).all()
    assert (himg.rgb[0, 1] < himg.rgb[0, 0]).any()


def test_contrast_stretch_spans_full_range(rng):
    rgb = np.stack([_pure_h(c) for c in rng.uniform(0.3, 0.6, 400)]).reshape(20, 20, 3)
    himg = deconvolve_h(rgb.round().astype(np.uint8), STAINS)
    stretched = enhance_contrast(himg, 1, 99)
    assert stretched.intensity.min() == 0
    assert stretched.intensity.max() == 255
    # monotone: stretching never swaps the order of two pixels
    order = np.argsort(himg.intensity.ravel(), kind="stable")
    assert np.all(np.diff(stretched.intensity.ravel()[order].astype(int)) >= 0)


def test_uniform_image_is_left_unchanged():
    himg = deconvolve_h(np.full((5, 5, 3), 120, dtype=np.uint8), STAINS)
    assert enhance_contrast(himg) is himg


def test_bad_percentiles_rejected():
    himg = deconvolve_h(np.full((5, 5, 3), 120, dtype=np.uint8), STAINS)
    with pytest.raises(ValueError):
        enhance_contrast(himg, 60, 40)


def test_lab_lightness_range():
    rgb = np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8)
    lightness = lab_lightness(rgb)
    assert lightness[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert lightness[0, 1] == pytest.approx(255.0, abs=1e-3)


def test_make_stain_matrix_normalizes_and_derives_residual():
    stains = make_stain_matrix((0.65, 0.70, 0.29), (0.07, 0.99, 0.11))
    np.testing.assert_allclose(np.linalg.norm(stains, axis=0), 1.0)
    assert abs(stains[:, 2] @ stains[:, 0]) < 1e-12


def test_make_stain_matrix_rejects_parallel_vectors():
    with pytest.raises(ConfigError):
        make_stain_matrix((1, 0, 0), (2, 0, 0), (0, 0, 1))


def test_contrast_stretch_maps_extremes_to_full_range():
    himg = deconvolve_h(np.stack([_pure_h(0.2), _pure_h(0.4)])[None].round().astype(np.uint8), STAINS)
    himg = replace(himg, intensity=np.array([[50, 100]], dtype=np.uint8))
    stretched = enhance_contrast(himg, 0, 100)
    assert stretched.intensity.tolist() == [[0, 255]]


def test_contrast_stretch_keeps_fields_consistent(rng):
    rgb = np.stack([_pure_h(c) for c in rng.uniform(0.3, 0.6, 400)]).reshape(20, 20, 3)
    himg = deconvolve_h(rgb.round().astype(np.uint8), STAINS)
    stretched = enhance_contrast(himg, 1, 99)
    assert stretched.scale == himg.scale
    np.testing.assert_allclose(stretched.concentration, stretched.intensity / 255.0 * himg.scale)
    np.testing.assert_array_equal(
        stretched.rgb, recolor(stretched.intensity, stretched.scale, stretched.h_vector),
    )


def test_deconvolution_ignores_row_order(rng):
    rgb = rng.integers(0, 256, (16, 12, 3), dtype=np.uint8)
    perm = rng.permutation(16)
    np.testing.assert_array_equal(
        deconvolve_h(rgb[perm], STAINS).intensity, deconvolve_h(rgb, STAINS).intensity[perm],
    )


def test_lab_lightness_of_mid_gray():
    gray = np.full((1, 1, 3), 128, dtype=np.uint8)
    assert lab_lightness(gray)[0, 0] == pytest.approx(53.59 * 2.55, abs=0.5)


def test_lab_lightness_rises_with_gray_level():
    ramp = np.repeat(np.arange(256, dtype=np.uint8)[None, :, None], 3, axis=-1)
    assert np.all(np.diff(lab_lightness(ramp)[0]) > 0)
