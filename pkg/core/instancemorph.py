"""
Instance Morphology - Size/shape priors on label maps.

Instances are 8-connected, background is 4-connected.

    label_components   binary mask -> label map (raster order of first pixel)
    remove_small       drop instances below max(floor, fraction * median area)
    fill_holes         absorb background pockets enclosed by a single instance
    split_convexity    cut merged nuclei between their two deepest convexity defects
    refine_shapes      stage-2 clean-up reusing the same priors
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from skimage.draw import line as draw_line
from skimage.measure import label as sk_label, regionprops
from skimage.morphology import binary_opening, disk
from skimage.segmentation import find_boundaries, relabel_sequential

from core.logger import log

_CROSS = ndimage.generate_binary_structure(2, 1)
_SQUARE = np.ones((3, 3), dtype=bool)
_HULL_TOL = 1e-9


@dataclass
class Instance:
    id: int
    area: int
    centroid: tuple          # (row, col)
    bbox: tuple              # (r0, c0, r1, c1)
    coords: np.ndarray       # (n, 2) row/col pixel coordinates
    solidity: float = 1.0    # area / pixel centres inside the hull, in (0, 1]

    @property
    def equivalent_diameter(self) -> float:
        return float(np.sqrt(4.0 * self.area / np.pi))

    @cached_property
    def boundary(self) -> np.ndarray:
        """Inner boundary pixels, (n, 2) row/col."""
        r0, c0, _, _ = self.bbox
        mask = _local_mask(self)
        rows, cols = np.nonzero(find_boundaries(mask, mode="inner"))
        return np.column_stack([rows + r0 - 1, cols + c0 - 1])

    @cached_property
    def hull(self):
        """Convex hull of pixel centres; None when degenerate (collinear/too few)."""
        if self.area < 3:
            return None
        try:
            return ConvexHull(self.coords.astype(np.float64))
        except QhullError:
            return None

    def hull_mask(self) -> np.ndarray:
        """Bbox-sized mask of pixels whose centres lie inside the hull."""
        r0, c0, r1, c1 = self.bbox
        if self.hull is None:
            return _local_mask(self)[1:-1, 1:-1]
        rows, cols = np.mgrid[r0:r1, c0:c1]
        centres = np.column_stack([rows.ravel(), cols.ravel()]).astype(np.float64)
        eq = self.hull.equations
        inside = np.all(centres @ eq[:, :2].T + eq[:, 2] <= _HULL_TOL, axis=1)
        return inside.reshape(r1 - r0, c1 - c0)


@dataclass
class SizePrior:
    areas: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    median_area: float
    min_area: float


@dataclass
class Defect:
    depth: float
    point: tuple             # (row, col)
    facet: int = field(default=-1)


# ─── Labeling ─────────────────────────────────────────────

def label_components(mask) -> np.ndarray:
    """8-connected components, ids in raster order of each component's first pixel."""
    mask = np.asarray(mask, dtype=bool)
    labels = sk_label(mask, connectivity=2).astype(np.int32)
    return _raster_order(labels)


def _raster_order(labels):
    if labels.max() == 0:
        return labels
    ids, first = np.unique(labels.ravel(), return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    lut = np.zeros(int(labels.max()) + 1, dtype=np.int32)
    lut[ids[np.argsort(first)]] = np.arange(1, len(ids) + 1, dtype=np.int32)
    return lut[labels]


def describe_instances(labels) -> list:
    """Per-instance geometry in ascending id order."""
    return [
        instance_from_coords(region.label, region.coords)
        for region in regionprops(np.asarray(labels))
    ]


def split_disconnected(labels) -> np.ndarray:
    """Give every extra 8-connected piece of an id its own new id (largest piece keeps it)."""
    labels = np.asarray(labels)
    pieces = sk_label(labels, connectivity=2, background=0)
    n_pieces = int(pieces.max())
    if n_pieces == len(np.unique(labels[labels > 0])):
        return labels.copy()

    sizes = np.bincount(pieces.ravel())
    slices = ndimage.find_objects(pieces)
    owner = {}
    for piece, sl in enumerate(slices, start=1):
        region = pieces[sl] == piece
        owner.setdefault(int(labels[sl][region][0]), []).append(piece)

    out = labels.copy()
    next_id = int(labels.max()) + 1
    for original, group in sorted(owner.items()):
        if len(group) < 2:
            continue
        group.sort(key=lambda p: (-sizes[p], p))
        for piece in group[1:]:
            sl = slices[piece - 1]
            out[sl][pieces[sl] == piece] = next_id
            next_id += 1
    return out


# ─── Size prior ───────────────────────────────────────────

def compute_size_prior(labels, floor=30, fraction=0.2) -> SizePrior:
    counts = np.bincount(np.asarray(labels).ravel())
    areas = counts[1:][counts[1:] > 0]
    if len(areas) == 0:
        return SizePrior(areas, np.zeros(0), np.zeros(1), 0.0, float(floor))

    hist_counts, hist_edges = np.histogram(areas, bins="auto")
    median = float(np.median(areas))
    return SizePrior(
        areas=areas,
        hist_counts=hist_counts,
        hist_edges=hist_edges,
        median_area=median,
        min_area=max(float(floor), fraction * median),
    )


def remove_small(labels, prior=None, floor=30, fraction=0.2) -> np.ndarray:
    """
    Erase instances with area < min_area and re-compact ids.

    Without an explicit prior the prior is recomputed on the survivors until
    nothing more drops (removals raise the median), so the result is a fixed
    point: calling again changes nothing.
    """
    out = np.array(labels, copy=True)
    while out.max() > 0:
        current = prior if prior is not None else compute_size_prior(out, floor, fraction)
        counts = np.bincount(out.ravel())
        small = np.nonzero((counts < current.min_area) & (counts > 0))[0]
        small = small[small != 0]
        if len(small) == 0:
            break
        out[np.isin(out, small)] = 0
        log.debug(f"remove_small: {len(small)} instances below {current.min_area:.1f} px")
        if prior is not None:
            break
    return relabel_sequential(out)[0].astype(np.int32)


# ─── Holes ────────────────────────────────────────────────

def fill_holes(labels) -> np.ndarray:
    """Absorb enclosed background regions bordered by exactly one instance id."""
    labels = np.asarray(labels)
    out = labels.copy()
    holes, n = ndimage.label(labels == 0, structure=_CROSS)
    if n == 0:
        return out

    border = np.unique(np.concatenate([
        holes[0, :], holes[-1, :], holes[:, 0], holes[:, -1],
    ]))
    filled = 0
    for hole_id, sl in enumerate(ndimage.find_objects(holes), start=1):
        if sl is None or hole_id in border:
            continue
        grown = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in sl)
        region = holes[grown] == hole_id
        ring = ndimage.binary_dilation(region, structure=_CROSS) & ~region
        owners = np.unique(labels[grown][ring])
        if len(owners) == 1 and owners[0] != 0:
            out[grown][region] = owners[0]
            filled += 1

    if filled:
        log.debug(f"fill_holes: filled {filled} holes")
    return out


# ─── Convexity splitting ──────────────────────────────────

def convexity_defects(instance) -> list:
    """
    Deepest boundary point under each hull edge, deepest first. Depth is the
    distance from the pixel centre to the edge's supporting line.
    """
    hull = instance.hull
    if hull is None:
        return []
    points = instance.boundary.astype(np.float64)
    if len(points) == 0:
        return []

    # scipy facets: normal . x + offset <= 0 inside, unit normals
    dist = -(points @ hull.equations[:, :2].T + hull.equations[:, 2])
    owner = np.argmin(dist, axis=1)
    depth = dist[np.arange(len(points)), owner]

    defects = []
    for facet in np.unique(owner):
        members = np.nonzero(owner == facet)[0]
        best = members[np.argmax(depth[members])]
        if depth[best] > 0:
            defects.append(Defect(
                depth=float(depth[best]),
                point=(int(points[best, 0]), int(points[best, 1])),
                facet=int(facet),
            ))
    defects.sort(key=lambda d: (-d.depth, d.point))
    return defects


def cut_line(p, q) -> np.ndarray:
    """4-connected pixel line from p to q, so no 8-connected path crosses it."""
    rows, cols = draw_line(int(p[0]), int(p[1]), int(q[0]), int(q[1]))
    pixels = [(rows[0], cols[0])]
    for r, c in zip(rows[1:], cols[1:]):
        pr, pc = pixels[-1]
        if r != pr and c != pc:
            pixels.append((r, pc))
        pixels.append((r, c))
    return np.asarray(pixels, dtype=np.intp)


def split_convexity(labels, solidity_split=0.97, depth_fraction=0.10, max_depth=3) -> np.ndarray:
    """
    Split instances whose solidity is below `solidity_split` along the straight
    line between their two deepest convexity defects, provided both are at
    least `depth_fraction` x equivalent diameter deep. The largest piece keeps
    the id, the others get new ids; pieces are examined again up to `max_depth`.
    Cut pixels become background.
    """
    out = np.array(labels, dtype=np.int32, copy=True)
    queue = [(inst, 0) for inst in describe_instances(out)]
    next_id = int(out.max()) + 1
    splits = 0

    while queue:
        inst, level = queue.pop(0)
        if level >= max_depth or inst.solidity >= solidity_split:
            continue

        defects = convexity_defects(inst)
        if len(defects) < 2:
            continue
        need = depth_fraction * inst.equivalent_diameter
        first, second = defects[0], defects[1]
        if second.depth < need:
            continue

        pieces = _cut(out, inst, first.point, second.point)
        if pieces is None:
            continue

        splits += 1
        queue.append((instance_from_coords(inst.id, pieces[0]), level + 1))
        for piece in pieces[1:]:
            out[piece[:, 0], piece[:, 1]] = next_id
            queue.append((instance_from_coords(next_id, piece), level + 1))
            next_id += 1

    if splits:
        log.debug(f"split_convexity: {splits} cuts")
    return out


def instance_from_coords(inst_id, coords) -> Instance:
    """
    Build an Instance from its (n, 2) pixel coordinates.

    Solidity counts the pixel centres inside the convex hull of the instance's
    own pixel centres, so a digitally convex shape scores exactly 1 and
    degenerate (collinear or tiny) instances score 1.
    """
    coords = np.asarray(coords)
    r0, c0 = coords.min(axis=0)
    r1, c1 = coords.max(axis=0) + 1
    inst = Instance(
        id=int(inst_id), area=len(coords),
        centroid=tuple(float(v) for v in coords.mean(axis=0)),
        bbox=(int(r0), int(c0), int(r1), int(c1)),
        coords=coords,
    )
    if inst.hull is not None:
        inst.solidity = inst.area / max(int(inst.hull_mask().sum()), inst.area)
    return inst


def _cut(labels, inst, p, q):
    """Apply a cut; returns piece coordinate arrays largest-first, or None (reverted)."""
    line = cut_line(p, q)
    on_instance = labels[line[:, 0], line[:, 1]] == inst.id
    line = line[on_instance]

    r0, c0, r1, c1 = inst.bbox
    mask = labels[r0:r1, c0:c1] == inst.id
    mask[line[:, 0] - r0, line[:, 1] - c0] = False
    pieces, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n < 2:
        return None

    labels[line[:, 0], line[:, 1]] = 0
    coords = [np.argwhere(pieces == k) + (r0, c0) for k in range(1, n + 1)]
    coords.sort(key=lambda a: (-len(a), tuple(a[0])))
    return coords


# ─── Stage-2 refinement ───────────────────────────────────

def open_instances(labels, radius=1) -> np.ndarray:
    """
    Morphological opening of every instance on its own. Pixels the opening
    would shave off one at a time (the digital corners of raster disks) stay;
    only trimmed groups of two or more pixels, spikes and bridges, are removed.
    """
    labels = np.asarray(labels)
    out = labels.copy()
    footprint = disk(radius)
    for inst_id, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        grown = tuple(slice(max(s.start - radius, 0), s.stop + radius) for s in sl)
        mask = labels[grown] == inst_id
        trimmed = mask & ~binary_opening(mask, footprint)
        groups, n = ndimage.label(trimmed, structure=_SQUARE)
        if n == 0:
            continue
        sizes = np.bincount(groups.ravel())
        out[grown][trimmed & (sizes[groups] >= 2)] = 0
    return out


def replace_with_hull(labels, threshold=0.7) -> np.ndarray:
    """Grow instances below `threshold` solidity to their convex hull over free pixels."""
    out = np.asarray(labels).copy()
    for inst in describe_instances(out):
        if inst.solidity >= threshold:
            continue
        r0, c0, r1, c1 = inst.bbox
        window = out[r0:r1, c0:c1]
        window[inst.hull_mask() & (window == 0)] = inst.id
    return out


def refine_shapes(labels, min_area_floor=30, min_area_fraction=0.2, solidity_split=0.97,
                  depth_fraction=0.10, max_depth=3, solidity_hull_replace=0.7) -> np.ndarray:
    """Opening -> fill_holes -> split_convexity -> remove_small -> convex-hull repair."""
    out = split_disconnected(open_instances(labels, radius=1))
    out = fill_holes(out)
    out = split_convexity(out, solidity_split, depth_fraction, max_depth)
    out = remove_small(out, floor=min_area_floor, fraction=min_area_fraction)
    return replace_with_hull(out, solidity_hull_replace)


def _local_mask(instance):
    """Instance mask over its bbox with a 1-px background margin."""
    r0, c0, r1, c1 = instance.bbox
    mask = np.zeros((r1 - r0 + 2, c1 - c0 + 2), dtype=bool)
    mask[instance.coords[:, 0] - r0 + 1, instance.coords[:, 1] - c0 + 1] = True
    return mask
