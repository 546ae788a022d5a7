"""
Adaptive Threshold - Bimodal histogram fit and geometric threshold correction.

For a bimodal block with peaks (t1, h1) and (t2, h2) on normalized axes:

    T_o = (t1 + t2) / 2
    m   = (h2 - h1) / (t2 - t1)
    T_c = T_o + m * (h1 + h2) / 2      # perpendicular through the midpoint hits y = 0
    T'  = T_o + lambda * (T_o - T_c)   # clamped 5% inside (t1, t2)

A taller background peak (h2 > h1) lowers the threshold; a taller nuclei
peak raises it.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks as _scipy_find_peaks

from core.errors import ContractError

BIMODAL = "bimodal"
UNIMODAL_DARK = "unimodal-dark"
UNIMODAL_LIGHT = "unimodal-light"
FLAT = "flat"

CLAMP_MARGIN = 0.05


@dataclass(frozen=True)
class BlockHistogram:
    counts: np.ndarray       # raw counts per bin
    smoothed: np.ndarray     # box-filtered counts
    occurrence: np.ndarray   # smoothed / max(smoothed), in [0, 1]
    centers: np.ndarray      # bin centres on [0, 1]
    flat: bool = False

    @property
    def bins(self):
        return len(self.counts)


@dataclass(frozen=True)
class BimodalFit:
    mode: str
    t1: float = None
    h1: float = None
    t2: float = None
    h2: float = None
    t_o: float = None
    t_c: float = None
    t_prime: float = None
    peak_count: int = 0
    mid_prominence: float = 0.0   # third-ranked peak, diagnostics only


def build_histogram(block, bins=64, smooth_radius=2) -> BlockHistogram:
    """Histogram of block intensities on [0, 1], box-smoothed and max-normalized."""
    if bins < 16:
        raise ValueError(f"bins must be >= 16, got {bins}")

    edges = np.linspace(0.0, 1.0, bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    if block.flat:
        zeros = np.zeros(bins)
        return BlockHistogram(zeros, zeros, zeros, centers, flat=True)

    counts, _ = np.histogram(block.intensity.ravel(), bins=edges)
    counts = counts.astype(np.float64)
    if smooth_radius > 0:
        smoothed = uniform_filter1d(counts, size=2 * smooth_radius + 1, mode="reflect")
    else:
        smoothed = counts.copy()

    peak = smoothed.max()
    occurrence = smoothed / peak if peak > 0 else smoothed
    return BlockHistogram(counts, smoothed, occurrence, centers)


def find_peaks(hist, prominence=0.1, min_separation=8) -> BimodalFit:
    """
    Pick the two most prominent peaks (prominence >= `prominence`, at least
    `min_separation` bins apart), ordered by intensity.

    Peaks are ranked by prominence first and the separation is enforced
    greedily down that ranking, so a tall narrow ripple next to a more
    prominent mode is the one dropped.
    """
    if hist.flat or not np.any(hist.occurrence > 0):
        return BimodalFit(mode=FLAT)

    # zero padding lets modes sitting on the first/last bin count as peaks
    padded = np.concatenate([[0.0], hist.occurrence, [0.0]])
    found, props = _scipy_find_peaks(padded, prominence=prominence)
    ranked = np.argsort(-props["prominences"], kind="stable")

    kept = []
    for k in ranked:
        if all(abs(found[k] - found[j]) >= min_separation for j in kept):
            kept.append(k)
    if not kept:
        return BimodalFit(mode=FLAT)

    idx = found[kept] - 1
    prominences = props["prominences"][kept]
    order = np.arange(len(kept))   # already by descending prominence
    mid = float(prominences[2]) if len(kept) > 2 else 0.0

    if len(idx) == 1:
        t = float(hist.centers[idx[0]])
        mode = UNIMODAL_DARK if t < 0.5 else UNIMODAL_LIGHT
        return BimodalFit(mode=mode, t1=t, h1=float(hist.occurrence[idx[0]]), peak_count=1)

    first, second = sorted(idx[order[:2]])
    return BimodalFit(
        mode=BIMODAL,
        t1=float(hist.centers[first]), h1=float(hist.occurrence[first]),
        t2=float(hist.centers[second]), h2=float(hist.occurrence[second]),
        peak_count=len(idx),
        mid_prominence=mid,
    )


def correct_threshold(fit, lam=0.3) -> BimodalFit:
    """Complete a bimodal fit with T_o, T_c and the corrected threshold T'."""
    if fit.mode != BIMODAL:
        raise ContractError(f"correct_threshold needs a bimodal fit, got {fit.mode}")
    if not 0 < lam < 1:
        raise ContractError(f"lambda must lie in (0, 1), got {lam}")
    if not fit.t1 < fit.t2:
        raise ContractError(f"peaks must be ordered by intensity, got {fit.t1} >= {fit.t2}")

    t_o = (fit.t1 + fit.t2) / 2
    slope = (fit.h2 - fit.h1) / (fit.t2 - fit.t1)
    offset = slope * (fit.h1 + fit.h2) / 2       # T_c - T_o
    t_c = t_o + offset
    t_prime = t_o - lam * offset

    margin = CLAMP_MARGIN * (fit.t2 - fit.t1)
    t_prime = min(max(t_prime, fit.t1 + margin), fit.t2 - margin)
    return replace(fit, t_o=t_o, t_c=t_c, t_prime=t_prime)


def binarize_block(block, fit) -> np.ndarray:
    """Foreground (nuclei) mask: dark side of T' for bimodal blocks."""
    if fit.mode == BIMODAL:
        if fit.t_prime is None:
            raise ContractError("bimodal fit has no corrected threshold; call correct_threshold first")
        return block.intensity < fit.t_prime
    if fit.mode == UNIMODAL_DARK:
        return np.ones(block.intensity.shape, dtype=bool)
    return np.zeros(block.intensity.shape, dtype=bool)


def threshold_block(block, bins=64, smooth_radius=2, prominence=0.1,
                    min_separation=8, lam=0.3, min_range=0.0):
    """Histogram -> peaks -> correction -> mask for one block. Returns (mask, fit)."""
    if not block.flat and block.spread < min_range:
        fit = BimodalFit(mode=FLAT)
        return binarize_block(block, fit), fit

    hist = build_histogram(block, bins=bins, smooth_radius=smooth_radius)
    fit = find_peaks(hist, prominence=prominence, min_separation=min_separation)
    if fit.mode == BIMODAL:
        fit = correct_threshold(fit, lam)
    return binarize_block(block, fit), fit
