"""
Synthetic - Planted-nuclei H&E-like images with known truth.

Dark purple ellipses on a pink background, with soft edges, per-nucleus colour
jitter, pixel noise, a controlled fraction of touching pairs and a few
desaturated staining-defect blobs that are not nuclei (absent from truth).
"""
import csv
import os

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.draw import disk as draw_disk, ellipse as draw_ellipse

from config import MANIFEST_HEADER
from core.imageio import write_labelmap
from core.logger import log

BACKGROUND_RGB = (236, 188, 214)
NUCLEUS_RGB = (92, 60, 150)
DEFECT_RGB = (135, 128, 135)


def disk_map(shape, centers, radius) -> np.ndarray:
    """Label map with one disk per centre, ids in centre order (later wins)."""
    labels = np.zeros(shape, dtype=np.int32)
    for i, (row, col) in enumerate(centers, start=1):
        rr, cc = draw_disk((row, col), radius, shape=shape)
        labels[rr, cc] = i
    return labels


def dumbbell(radius=10, separation=16, pad=8):
    """
    Two overlapping disks side by side.
    Returns (merged single-instance label map, two-instance truth).
    """
    height = 2 * (radius + pad)
    width = 2 * (radius + pad) + separation
    row = height // 2
    centers = [(row, radius + pad), (row, radius + pad + separation)]
    truth = disk_map((height, width), centers, radius)
    return (truth > 0).astype(np.int32), truth


def _place(rng, shape, radii, taken, margin):
    """Rejection-sample a centre clear of every placed nucleus."""
    height, width = shape
    for _ in range(200):
        row = rng.uniform(margin, height - margin)
        col = rng.uniform(margin, width - margin)
        if all(np.hypot(row - r, col - c) >= rad + max(radii) + 2 for r, c, rad in taken):
            return row, col
    return None


def planted_nuclei(shape=(256, 256), n_nuclei=40, radius=(7.0, 10.0), max_elongation=1.6,
                   merge_rate=0.15, n_defects=4, defect_radius=(3.5, 5.0),
                   contrast=1.0, noise=4.0, seed=0):
    """
    Render one image. Returns (rgb uint8 (h, w, 3), truth int32 label map).

    `merge_rate` is the fraction of nuclei planted with a touching partner;
    `contrast` in (0, 1] scales how far nuclei colour sits from background.
    """
    rng = np.random.default_rng(seed)
    height, width = shape
    truth = np.zeros(shape, dtype=np.int32)
    defects = np.zeros(shape, dtype=bool)
    taken = []
    colors = {}

    def plant(row, col, rad):
        inst_id = len(colors) + 1
        elong = rng.uniform(1.0, max_elongation)
        rr, cc = draw_ellipse(
            row, col, rad, rad / elong, shape=shape, rotation=rng.uniform(0, np.pi),
        )
        truth[rr, cc] = inst_id
        colors[inst_id] = np.array(NUCLEUS_RGB) + rng.normal(0, 6, 3)
        taken.append((row, col, rad))

    lo, hi = radius
    while len(colors) < n_nuclei:
        rad = rng.uniform(lo, hi)
        spot = _place(rng, shape, (rad, hi), taken, hi + 2)
        if spot is None:
            log.warning(f"synthetic: only {len(colors)} of {n_nuclei} nuclei fit")
            break
        plant(*spot, rad)
        if len(colors) < n_nuclei and rng.random() < merge_rate:
            # partner overlapping by ~20% of the radius
            angle = rng.uniform(0, 2 * np.pi)
            rad2 = rng.uniform(lo, hi)
            dist = 0.8 * (rad + rad2)
            row2 = spot[0] + dist * np.sin(angle)
            col2 = spot[1] + dist * np.cos(angle)
            if hi + 2 <= row2 < height - hi - 2 and hi + 2 <= col2 < width - hi - 2:
                plant(row2, col2, rad2)

    for _ in range(n_defects):
        rad = rng.uniform(*defect_radius)
        spot = _place(rng, shape, (rad, hi), taken, hi + 2)
        if spot is None:
            break
        rr, cc = draw_disk(spot, rad, shape=shape)
        defects[rr, cc] = True
        taken.append((*spot, rad))

    background = np.array(BACKGROUND_RGB, dtype=np.float64)
    paint = np.broadcast_to(background, (*shape, 3)).copy()
    for inst_id, color in colors.items():
        paint[truth == inst_id] = background + contrast * (color - background)
    paint[defects] = DEFECT_RGB

    # soft edges: blend painted colour into background through a blurred coverage map
    coverage = ndimage.gaussian_filter(((truth > 0) | defects).astype(np.float64), sigma=0.7)
    fill = ndimage.grey_dilation(paint, size=(3, 3, 1))
    fill[(truth > 0) | defects] = paint[(truth > 0) | defects]
    rgb = background + coverage[..., None] * (fill - background)
    rgb += rng.normal(0, noise, rgb.shape)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8), truth


def write_suite(out_dir, n_images=20, seed=0, **kwargs):
    """
    Write `n_images` planted images, their truth label maps and two manifests:
    images.csv (image, annotation=truth) and truth.csv (truth maps as images).
    Returns (images manifest path, truth manifest path).
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_images):
        params = dict(kwargs)
        params.setdefault("n_nuclei", int(rng.integers(30, 81)))
        rgb, truth = planted_nuclei(seed=int(rng.integers(0, 2**31 - 1)), **params)
        name = f"synth_{i:03d}"
        Image.fromarray(rgb).save(os.path.join(out_dir, f"{name}.png"))
        write_labelmap(truth, os.path.join(out_dir, f"{name}_truth.png"))
        rows.append((f"{name}.png", f"{name}_truth.png"))

    images_csv = os.path.join(out_dir, "images.csv")
    truth_csv = os.path.join(out_dir, "truth.csv")
    with open(images_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    with open(truth_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows((t, "") for _, t in rows)

    log.info(f"synthetic: wrote {n_images} images to {out_dir}")
    return images_csv, truth_csv
