"""
Metrics - Aggregated Jaccard Index (instance-aware) and pixel Dice.

AJI matching: ground-truth instances in ascending id order each claim the
not-yet-claimed prediction with the highest IoU among those overlapping it
(ties -> lower prediction id). Unclaimed prediction pixels are added to the
union at the end.
"""
from dataclasses import dataclass, field

import numpy as np

from core.errors import ContractError


@dataclass
class AjiBreakdown:
    intersection: int = 0
    union: int = 0
    unmatched_pred_pixels: int = 0
    pairs: list = field(default_factory=list)   # (gt id, pred id, jaccard)
    aji: float = 1.0
    empty: bool = False


def _check_shapes(gt, pred):
    if gt.shape != pred.shape:
        raise ContractError(f"label maps differ in size: {gt.shape} vs {pred.shape}")


def _overlaps(gt, pred):
    """Sparse contingency table as {gt id: {pred id: pixel count}}."""
    both = (gt > 0) & (pred > 0)
    pairs, counts = np.unique(
        np.stack([gt[both], pred[both]], axis=1), axis=0, return_counts=True,
    ) if np.any(both) else (np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))
    table = {}
    for (g, p), n in zip(pairs, counts):
        table.setdefault(int(g), {})[int(p)] = int(n)
    return table


def aji(gt, pred) -> AjiBreakdown:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    _check_shapes(gt, pred)

    gt_ids, gt_areas = np.unique(gt[gt > 0], return_counts=True)
    pred_ids, pred_areas = np.unique(pred[pred > 0], return_counts=True)
    if len(gt_ids) == 0 and len(pred_ids) == 0:
        return AjiBreakdown(aji=1.0, empty=True)

    gt_area = dict(zip(gt_ids.tolist(), gt_areas.tolist()))
    pred_area = dict(zip(pred_ids.tolist(), pred_areas.tolist()))
    table = _overlaps(gt, pred)

    result = AjiBreakdown()
    claimed = set()
    for g in gt_ids.tolist():
        best, best_iou, best_inter = None, -1.0, 0
        for p, inter in sorted(table.get(g, {}).items()):
            if p in claimed:
                continue
            iou = inter / (gt_area[g] + pred_area[p] - inter)
            if iou > best_iou:
                best, best_iou, best_inter = p, iou, inter

        if best is None:
            result.union += gt_area[g]
            continue
        claimed.add(best)
        result.intersection += best_inter
        result.union += gt_area[g] + pred_area[best] - best_inter
        result.pairs.append((g, best, best_iou))

    result.unmatched_pred_pixels = sum(a for p, a in pred_area.items() if p not in claimed)
    total = result.union + result.unmatched_pred_pixels
    result.aji = result.intersection / total if total else 1.0
    return result


def dice(gt, pred) -> float:
    """2|A & B| / (|A| + |B|) on foreground masks; both empty -> 1."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    _check_shapes(gt, pred)
    a, b = gt > 0, pred > 0
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def score_pair(gt, pred) -> dict:
    return {"aji": aji(gt, pred).aji, "dice": dice(gt, pred)}


def mean_scores(rows) -> dict:
    """Mean of each metric over a list of score dicts."""
    if not rows:
        return {}
    return {key: float(np.mean([r[key] for r in rows])) for key in rows[0]}
