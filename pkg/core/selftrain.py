"""
Self-Training - Stage-2 pixel relabeling from stage-1 pseudo-labels.

Per tile of the H-recolored image a two-class Gaussian model (nuclei vs
background, full covariance, ML fit plus ridge) is trained on the pseudo-labels.
A pixel flips only when the model prefers the other class with posterior
>= tau_flip; everything else keeps its pseudo-label.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from core.blockgrid import decompose
from core.errors import TileSkipped
from core.instancemorph import label_components
from core.logger import log

BACKGROUND, NUCLEI = 0, 1


@dataclass(frozen=True)
class PixelClassifier:
    means: np.ndarray        # (2, 3), index 0 background, 1 nuclei
    covariances: np.ndarray  # (2, 3, 3), ridge-regularized
    priors: np.ndarray       # (2,), pseudo-label frequencies

    def posteriors(self, colors) -> np.ndarray:
        """(n, 2) class posteriors by Bayes rule; rows sum to 1."""
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, self.means.shape[1])
        log_joint = np.column_stack([
            multivariate_normal.logpdf(colors, mean=self.means[k], cov=self.covariances[k])
            + np.log(self.priors[k])
            for k in (BACKGROUND, NUCLEI)
        ])
        return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


@dataclass(frozen=True)
class TileRelabel:
    tile: int
    fg_to_bg: int = 0
    bg_to_fg: int = 0
    skipped: str = None


@dataclass
class RelabelReport:
    tiles: list = field(default_factory=list)

    @property
    def flipped(self) -> int:
        return sum(t.fg_to_bg + t.bg_to_fg for t in self.tiles)

    @property
    def skipped(self) -> int:
        return sum(1 for t in self.tiles if t.skipped)


def fit_tile(colors, pseudo, min_class_pixels=50, ridge=1e-4) -> PixelClassifier:
    """Class-conditional Gaussian fit; raises TileSkipped when a class is too small."""
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    pseudo = np.asarray(pseudo, dtype=bool).reshape(-1)

    counts = (int(np.count_nonzero(~pseudo)), int(np.count_nonzero(pseudo)))
    for name, count in zip(("background", "nuclei"), counts):
        if count < min_class_pixels:
            raise TileSkipped(f"{name} has {count} pixels (< {min_class_pixels})")

    means, covariances = [], []
    for members in (~pseudo, pseudo):
        x = colors[members]
        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / len(x) + ridge * np.eye(3)
        means.append(mean)
        covariances.append(cov)

    priors = np.array(counts, dtype=np.float64) / len(pseudo)
    return PixelClassifier(np.array(means), np.array(covariances), priors)


def relabel_uncertain(clf, colors, pseudo, tau_flip=0.9) -> np.ndarray:
    """Flip pixels the classifier contradicts with posterior >= tau_flip."""
    pseudo = np.asarray(pseudo, dtype=bool)
    if tau_flip >= 1.0:
        # 1.0 means "never certain enough"; rounding can make posteriors exactly 1
        return pseudo.copy()

    post = clf.posteriors(colors)
    preferred = np.argmax(post, axis=1).astype(bool)
    confidence = post.max(axis=1)
    flip = (preferred != pseudo.reshape(-1)) & (confidence >= tau_flip)
    return np.where(flip, preferred, pseudo.reshape(-1)).reshape(pseudo.shape)


def stage2_pass(labels, himg_rgb, tile_size=200, tau_flip=0.9, min_class_pixels=50,
                ridge=1e-4, workers=1):
    """
    Relabel each tile, then relabel instances globally on the merged binary mask.
    Skipped tiles keep their stage-1 labels. Returns (labels, RelabelReport).
    """
    labels = np.asarray(labels)
    colors_all = np.asarray(himg_rgb, dtype=np.float64) / 255.0
    grid = decompose(labels, tile_size)
    pseudo_all = labels > 0

    def run_tile(block):
        sl = block.slices
        pseudo = pseudo_all[sl]
        colors = colors_all[sl].reshape(-1, 3)
        try:
            clf = fit_tile(colors, pseudo, min_class_pixels=min_class_pixels, ridge=ridge)
        except TileSkipped as skip:
            log.debug(f"selftrain: tile {block.index} skipped, {skip.reason}")
            return pseudo, TileRelabel(block.index, skipped=skip.reason)
        relabeled = relabel_uncertain(clf, colors, pseudo, tau_flip)
        return relabeled, TileRelabel(
            block.index,
            fg_to_bg=int(np.count_nonzero(pseudo & ~relabeled)),
            bg_to_fg=int(np.count_nonzero(~pseudo & relabeled)),
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_tile, grid.blocks))

    report = RelabelReport()
    binary = pseudo_all.copy()
    for block, (relabeled, tile_report) in zip(grid.blocks, results):
        binary[block.slices] = relabeled
        report.tiles.append(tile_report)

    log.info(
        f"selftrain: {report.flipped} pixels flipped, "
        f"{report.skipped}/{len(grid)} tiles skipped"
    )
    if report.flipped == 0:
        return labels.copy(), report
    return label_components(binary), report
