"""
Stain Projection - Hematoxylin channel by optical-density colour deconvolution.

    OD_c = -ln((I_c + 1) / 256)
    concentrations = inverse(stains) . OD

The H channel is rescaled by its image-wide maximum to [0, 255] and also
re-rendered as a 3-channel "H only" raster, which stage 1 (block PCA) and
stage 2 (pixel classifier) work on.
"""
from dataclasses import dataclass, replace

import numpy as np
from skimage.color import rgb2lab
from skimage.exposure import rescale_intensity

from core.errors import ConfigError


@dataclass(frozen=True)
class HImage:
    intensity: np.ndarray      # (h, w) uint8, H concentration scaled to [0, 255]
    rgb: np.ndarray            # (h, w, 3) uint8, H-recolored raster
    concentration: np.ndarray  # (h, w) float, H concentration rendered by `intensity`
    scale: float               # concentration mapped to intensity 255, fixed at deconvolution
    h_vector: np.ndarray       # unit H stain vector used for recoloring

    @property
    def shape(self):
        return self.intensity.shape


def make_stain_matrix(h_vector, e_vector, residual=None) -> np.ndarray:
    """Unit-column 3x3 stain matrix; residual defaults to the normalized cross product."""
    h = np.asarray(h_vector, dtype=np.float64)
    e = np.asarray(e_vector, dtype=np.float64)
    r = np.cross(h, e) if residual is None else np.asarray(residual, dtype=np.float64)
    stains = np.stack([h, e, r], axis=1)
    norms = np.linalg.norm(stains, axis=0)
    if np.any(norms == 0):
        raise ConfigError("stain_matrix: zero-length stain vector")
    stains = stains / norms
    if not np.isfinite(np.linalg.cond(stains)) or np.linalg.cond(stains) > 1e12:
        raise ConfigError("stain_matrix: singular stain matrix")
    return stains


def optical_density(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return -np.log((rgb + 1.0) / 256.0)


def stain_concentrations(rgb, stains) -> np.ndarray:
    """Per-pixel (H, E, residual) concentrations, unclamped."""
    stains = np.asarray(stains, dtype=np.float64)
    try:
        inverse = np.linalg.inv(stains)
    except np.linalg.LinAlgError as e:
        raise ConfigError("stain_matrix: singular stain matrix") from e
    return optical_density(rgb) @ inverse.T


def deconvolve_h(rgb, stains) -> HImage:
    concentration = np.clip(stain_concentrations(rgb, stains)[..., 0], 0.0, None)
    scale = float(concentration.max()) if concentration.size else 0.0
    if scale > 0:
        intensity = np.round(concentration / scale * 255.0)
    else:
        intensity = np.zeros_like(concentration)

    h_vector = np.asarray(stains, dtype=np.float64)[:, 0]
    intensity = intensity.astype(np.uint8)
    return HImage(
        intensity=intensity,
        rgb=recolor(intensity, scale, h_vector),
        concentration=concentration,
        scale=scale,
        h_vector=h_vector,
    )


def recolor(intensity, scale, h_vector) -> np.ndarray:
    """Render H intensities back to RGB using the H stain vector alone."""
    conc = np.asarray(intensity, dtype=np.float64) / 255.0 * scale
    od = conc[..., None] * np.asarray(h_vector)[None, None, :]
    rgb = 256.0 * np.exp(-od) - 1.0
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def enhance_contrast(himg: HImage, lo_pct=1.0, hi_pct=99.0) -> HImage:
    """Linear stretch of the lo/hi percentiles of H intensity onto [0, 255]."""
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ValueError(f"percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}")

    lo, hi = np.percentile(himg.intensity, [lo_pct, hi_pct])
    if hi <= lo:
        return himg

    stretched = rescale_intensity(
        himg.intensity.astype(np.float64), in_range=(lo, hi), out_range=(0.0, 255.0),
    )
    intensity = np.round(stretched).astype(np.uint8)
    # concentration follows the stretch so intensity, rgb and concentration agree
    return replace(
        himg,
        intensity=intensity,
        rgb=recolor(intensity, himg.scale, himg.h_vector),
        concentration=intensity / 255.0 * himg.scale,
    )


def lab_lightness(rgb) -> np.ndarray:
    """CIELAB L* of an sRGB image, scaled from [0, 100] to [0, 255]."""
    rgb = np.asarray(rgb)
    lightness = rgb2lab(rgb.astype(np.float64) / 255.0)[..., 0]
    return np.clip(lightness * 2.55, 0.0, 255.0)
