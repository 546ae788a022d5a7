"""
Pipeline - Two-stage nuclei segmentation.

Stage 1: stain deconvolution -> block PCA + adaptive threshold -> morphology
(output A) -> tile-wise false-positive removal (output B).
Stage 2: self-training relabel on B -> shape refinement (output C).
"""
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from core.adaptive_threshold import threshold_block
from core.blockgrid import block_pca_intensity, decompose
from core.errors import ContractError, StageError
from core.fp_filter import score_and_filter
from core.instancemorph import (
    fill_holes, label_components, refine_shapes, remove_small, split_convexity,
)
from core.logger import log
from core.selftrain import stage2_pass
from core.settings import PipelineConfig
from core.stain import deconvolve_h, enhance_contrast, lab_lightness

STAGE_NAMES = ("stain", "threshold", "morphology", "fp_filter", "selftrain", "refine")


@dataclass
class StageOutputs:
    stage1_morph: np.ndarray            # A: Stage-1 (Modules 1&2)
    stage1_fp: np.ndarray               # B: Stage-1 (Modules 1&2&3)
    final: np.ndarray                   # C: Stages 1&2
    fp_decisions: list = field(default_factory=list)
    relabel_report: object = None
    block_fits: list = field(default_factory=list)   # (Block, BimodalFit) in block order

    @property
    def stages(self):
        return self.stage1_morph, self.stage1_fp, self.final


@contextmanager
def _stage(name):
    """Attach the stage name to anything a module raises."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        log.debug(f"pipeline: stage '{name}' failed", exc_info=True)
        raise StageError(name, e) from e


def count_instances(labels) -> int:
    return int(len(np.unique(labels[labels > 0])))


def threshold_image(himg_rgb, lightness, cfg, workers=1):
    """Per-block binarization assembled into one mask. Returns (mask, [(block, fit)])."""
    grid = decompose(himg_rgb, cfg.block_size)

    def run_block(block):
        sl = block.slices
        ib = block_pca_intensity(himg_rgb[sl], lightness[sl], block)
        mask, fit = threshold_block(
            ib, bins=cfg.bins, smooth_radius=cfg.smooth_radius,
            prominence=cfg.prominence, min_separation=cfg.min_separation,
            lam=cfg.lambda_, min_range=cfg.min_block_range,
        )
        log.debug(f"threshold: block {block.index} {fit.mode} t'={fit.t_prime}")
        return mask, fit

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_block, grid.blocks))

    mask = np.zeros(himg_rgb.shape[:2], dtype=bool)
    fits = []
    for block, (block_mask, fit) in zip(grid.blocks, results):
        mask[block.slices] = block_mask
        fits.append((block, fit))
    return mask, fits


def run(img, cfg: PipelineConfig = None, workers=None) -> StageOutputs:
    """Segment one RGB image; all three stage outputs share its dimensions."""
    cfg = cfg or PipelineConfig()
    workers = workers or cfg.workers
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected an (h, w, 3) RGB image, got shape {img.shape}")
    height, width = img.shape[:2]
    if height < cfg.block_size or width < cfg.block_size:
        raise ContractError(
            f"image {width}x{height} is smaller than one {cfg.block_size}px block"
        )
    log.info(f"pipeline: segmenting {width}x{height} image")

    with _stage("stain"):
        himg = deconvolve_h(img, cfg.stains)
        himg = enhance_contrast(himg, cfg.contrast_lo_pct, cfg.contrast_hi_pct)
        lightness = lab_lightness(img)

    with _stage("threshold"):
        mask, fits = threshold_image(himg.rgb, lightness, cfg, workers)

    with _stage("morphology"):
        labels = label_components(mask)
        labels = remove_small(labels, floor=cfg.min_area_floor, fraction=cfg.min_area_fraction)
        labels = split_convexity(
            labels, cfg.solidity_split, cfg.defect_depth_fraction, cfg.split_max_depth,
        )
        stage_a = fill_holes(labels)
    log.info(f"pipeline: stage-1 morphology -> {count_instances(stage_a)} instances")

    with _stage("fp_filter"):
        stage_b, decisions = score_and_filter(
            stage_a, img, tile_size=cfg.tile_size, t_s=cfg.t_s, gamma=cfg.gamma,
            min_reference_count=cfg.min_reference_count, ring_width=cfg.contrast_ring,
            feature_scale=cfg.feature_scale, workers=workers,
        )
    log.info(f"pipeline: false-positive filter -> {count_instances(stage_b)} instances")

    with _stage("selftrain"):
        relabeled, report = stage2_pass(
            stage_b, himg.rgb, tile_size=cfg.tile_size, tau_flip=cfg.tau_flip,
            min_class_pixels=cfg.min_class_pixels, ridge=cfg.ridge, workers=workers,
        )

    with _stage("refine"):
        stage_c = refine_shapes(
            relabeled, cfg.min_area_floor, cfg.min_area_fraction, cfg.solidity_split,
            cfg.defect_depth_fraction, cfg.split_max_depth, cfg.solidity_hull_replace,
        )
    log.info(f"pipeline: stage-2 -> {count_instances(stage_c)} instances")

    return StageOutputs(
        stage1_morph=stage_a, stage1_fp=stage_b, final=stage_c,
        fp_decisions=decisions, relabel_report=report, block_fits=fits,
    )
