"""
False-Positive Filter - Tile-wise removal of instances that do not look like nuclei.

Per tile, instances larger than the image-wide median area form the reference
set R, the rest the query set Q. Each query is scored against the mean R
feature vector with a Gaussian kernel

    S(x_R, x_j) = exp(-gamma * ||x_j - x_R||^2)

and erased when S < T_s.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import rgb2hsv
from skimage.morphology import disk

from core.blockgrid import decompose
from core.errors import ContractError
from core.instancemorph import describe_instances
from core.logger import log

REFERENCE = "R"
QUERY = "Q"

# std of a variable bounded in [0, 1] never exceeds 0.5
_MAX_STD = 0.5


@dataclass(frozen=True)
class InstanceFeatures:
    mean_h: float
    mean_s: float
    mean_v: float
    contrast: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_h, self.mean_s, self.mean_v, self.contrast])

    @classmethod
    def from_array(cls, values) -> "InstanceFeatures":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class FpDecision:
    tile: int
    instance_id: int
    membership: str          # "R" or "Q"
    score: float = None      # Q only, and only when the tile was scored
    removed: bool = False


@dataclass(frozen=True)
class TileGrid:
    tile_size: int
    grid: object             # BlockGrid over the image
    assignment: dict         # tile index -> list of instance ids


def build_tile_grid(labels, tile_size=200, instances=None) -> TileGrid:
    """Assign every instance to the tile containing its centroid."""
    grid = decompose(labels, tile_size)
    if instances is None:
        instances = describe_instances(labels)
    assignment = {block.index: [] for block in grid}
    for inst in instances:
        row, col = inst.centroid
        assignment[grid.block_of(row, col)].append(inst.id)
    return TileGrid(tile_size=tile_size, grid=grid, assignment=assignment)


# ─── Features ─────────────────────────────────────────────

def instance_features(rgb, labels, ring_width=2) -> dict:
    """
    Mean H, S, V (each in [0, 1]) over the instance and contrast = std of V over
    the instance plus a `ring_width`-px outer ring, divided by 0.5 and clamped.
    Returns {instance id: InstanceFeatures}.
    """
    labels = np.asarray(labels)
    hsv = rgb2hsv(np.asarray(rgb))
    value = hsv[..., 2]
    ids = np.unique(labels[labels > 0])
    if len(ids) == 0:
        return {}

    means = [ndimage.mean(hsv[..., k], labels=labels, index=ids) for k in range(3)]
    footprint = disk(ring_width)
    slices = ndimage.find_objects(labels)

    features = {}
    for i, inst_id in enumerate(ids):
        sl = slices[inst_id - 1]
        grown = tuple(
            slice(max(s.start - ring_width, 0), min(s.stop + ring_width, dim))
            for s, dim in zip(sl, labels.shape)
        )
        mask = labels[grown] == inst_id
        support = ndimage.binary_dilation(mask, structure=footprint)
        contrast = min(float(np.std(value[grown][support])) / _MAX_STD, 1.0)
        features[int(inst_id)] = InstanceFeatures(
            mean_h=float(means[0][i]),
            mean_s=float(means[1][i]),
            mean_v=float(means[2][i]),
            contrast=contrast,
        )
    return features


# ─── Reference / query ────────────────────────────────────

def assign_sets(areas, size_threshold):
    """Split {id: area} into (R, Q): area > threshold goes to R."""
    reference = {i for i, a in areas.items() if a > size_threshold}
    query = set(areas) - reference
    return reference, query


def aggregate_reference(features) -> InstanceFeatures:
    """Componentwise mean of the reference features."""
    features = list(features)
    if not features:
        raise ContractError("aggregate_reference needs at least one reference instance")
    return InstanceFeatures.from_array(np.mean([f.as_array() for f in features], axis=0))


def similarity(x_r, x_j, gamma=0.1) -> float:
    """Gaussian kernel exp(-gamma * ||x_j - x_r||^2)."""
    if gamma <= 0:
        raise ContractError(f"gamma must be positive, got {gamma}")
    a = x_r.as_array() if isinstance(x_r, InstanceFeatures) else np.asarray(x_r, dtype=np.float64)
    b = x_j.as_array() if isinstance(x_j, InstanceFeatures) else np.asarray(x_j, dtype=np.float64)
    return float(np.exp(-gamma * np.sum((b - a) ** 2)))


# ─── Filtering ────────────────────────────────────────────

def score_and_filter(labels, rgb, tile_size=200, t_s=0.6, gamma=0.1,
                     min_reference_count=2, ring_width=2, feature_scale=10.0,
                     workers=1):
    """
    Remove low-similarity query instances tile by tile.

    Features are multiplied by `feature_scale` before the kernel. Tiles with
    fewer than `min_reference_count` reference instances are left untouched.
    Returns (filtered labels, decisions ordered by tile then id).
    """
    if not 0 < t_s < 1:
        raise ContractError(f"t_s must lie in (0, 1), got {t_s}")

    labels = np.asarray(labels)
    instances = describe_instances(labels)
    out = labels.copy()
    if not instances:
        return out, []

    areas = {inst.id: inst.area for inst in instances}
    size_threshold = float(np.median(list(areas.values())))
    features = instance_features(rgb, labels, ring_width=ring_width)
    tiles = build_tile_grid(labels, tile_size, instances)

    def run_tile(tile):
        ids = tiles.assignment[tile]
        reference, query = assign_sets({i: areas[i] for i in ids}, size_threshold)
        decisions = [FpDecision(tile, i, REFERENCE) for i in sorted(reference)]
        if len(reference) < min_reference_count:
            decisions += [FpDecision(tile, i, QUERY) for i in sorted(query)]
            if query:
                log.debug(f"fp_filter: tile {tile} skipped ({len(reference)} reference instances)")
            return decisions

        x_r = aggregate_reference(features[i] for i in reference).as_array() * feature_scale
        for i in sorted(query):
            score = similarity(x_r, features[i].as_array() * feature_scale, gamma)
            decisions.append(FpDecision(tile, i, QUERY, score=score, removed=score < t_s))
        return decisions

    order = sorted(tiles.assignment)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        per_tile = list(pool.map(run_tile, order))

    decisions = [d for tile_decisions in per_tile for d in tile_decisions]
    removed = [d.instance_id for d in decisions if d.removed]
    if removed:
        out[np.isin(out, removed)] = 0
    log.info(
        f"fp_filter: median area {size_threshold:.0f} px, "
        f"removed {len(removed)} of {len(instances)} instances"
    )
    return out, decisions
