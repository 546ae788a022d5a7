"""
Image I/O - Load/save rasters and turn ImageScope annotations into label maps.

Rasters are numpy arrays:
    RGB image   (height, width, 3) uint8
    label map   (height, width) int32, 0 = background
"""
import csv
import os
from dataclasses import dataclass, field

import numpy as np
from lxml import etree
from PIL import Image, UnidentifiedImageError
from skimage.segmentation import find_boundaries

from config import MANIFEST_HEADER, OVERLAY_COLOR
from core.errors import AnnotationError, ImageFormatError
from core.logger import log

MAX_LABEL = 65535

# Pillow modes that hold more than 8 bits per channel
_WIDE_MODES = {"I", "F", "I;16", "I;16B", "I;16L", "I;16N", "RGB;16", "RGBA;16"}


@dataclass
class AnnotationPolygons:
    """Closed polygons in pixel coordinates, one (n, 2) x/y array each."""
    polygons: list = field(default_factory=list)
    skipped: int = 0
    warnings: list = field(default_factory=list)


# ─── Rasters ──────────────────────────────────────────────

def load_rgb(path) -> np.ndarray:
    """Load an 8-bit RGB PNG/TIFF; alpha is dropped."""
    image = _open(path)
    mode = image.mode
    depth = _bit_depth(image)
    if depth != 8:
        raise ImageFormatError(f"{path}: unsupported bit depth ({depth}-bit), expected 8-bit RGB")
    image.load()
    if mode in ("RGBA", "P"):
        image = image.convert("RGB")
    elif mode != "RGB":
        raise ImageFormatError(f"{path}: unsupported channel count (mode {mode}), expected 3-channel RGB")

    data = np.array(image, dtype=np.uint8)
    if data.ndim != 3 or data.shape[2] != 3 or data.shape[0] == 0 or data.shape[1] == 0:
        raise ImageFormatError(f"{path}: unexpected raster shape {data.shape}")
    return data


def load_labelmap(path) -> np.ndarray:
    """Load a label map written by write_labelmap (or any 8/16-bit grayscale PNG)."""
    image = _open(path)
    if image.mode not in ("L", "I", "I;16", "I;16B", "I;16L"):
        raise ImageFormatError(f"{path}: label maps must be single-channel, got mode {image.mode}")
    image.load()
    return np.array(image).astype(np.int32)


def write_labelmap(labels, path):
    """Write labels verbatim as a 16-bit single-channel PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ImageFormatError(f"{path}: label map must be 2-D, got shape {labels.shape}")
    if labels.size and labels.min() < 0:
        raise ImageFormatError(f"{path}: negative label ids are not allowed")
    if labels.size and labels.max() > MAX_LABEL:
        raise ImageFormatError(
            f"{path}: {int(labels.max())} exceeds the 16-bit label limit of {MAX_LABEL}"
        )

    _ensure_parent(path)
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")


def write_overlay(rgb, labels, path, color=OVERLAY_COLOR):
    """Draw 1-px instance boundaries over the image."""
    overlay = np.array(rgb, dtype=np.uint8, copy=True)
    edges = find_boundaries(np.asarray(labels), mode="inner")
    overlay[edges] = color
    _ensure_parent(path)
    Image.fromarray(overlay).save(path, format="PNG")


def _open(path):
    if not os.path.exists(path):
        raise ImageFormatError(f"{path}: file not found")
    try:
        return Image.open(path)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageFormatError(f"{path}: unreadable image ({e})") from e


def _bit_depth(image) -> int:
    """Bits per channel, read before decoding (Pillow narrows 16-bit RGB silently)."""
    if image.mode in _WIDE_MODES:
        return 16 if "16" in image.mode or image.mode == "I" else 32
    tags = getattr(image, "tag_v2", None)
    if tags is not None and 258 in tags:
        bps = tags[258]
        return int(max(bps)) if isinstance(bps, tuple) else int(bps)
    for tile in image.tile or ():
        args = tile[3]
        rawmode = args[0] if isinstance(args, tuple) else args
        if ";16" in str(rawmode):
            return 16
    return 8


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ─── Annotations ──────────────────────────────────────────

def parse_annotation_xml(path) -> AnnotationPolygons:
    """
    Read Aperio ImageScope XML:
        Annotations/Annotation/Regions/Region/Vertices/Vertex[@X, @Y]
    One polygon per Region, vertex order preserved. Regions with fewer than
    three vertices are skipped and counted.
    """
    try:
        tree = etree.parse(str(path))
    except (OSError, etree.XMLSyntaxError) as e:
        raise AnnotationError(f"{path}: malformed annotation XML ({e})") from e

    result = AnnotationPolygons()
    for index, region in enumerate(tree.getroot().iterfind(".//Region")):
        vertices = region.findall("./Vertices/Vertex")
        try:
            points = [(float(v.get("X")), float(v.get("Y"))) for v in vertices]
        except (TypeError, ValueError) as e:
            raise AnnotationError(f"{path}: region {index} has a non-numeric vertex") from e

        if len(points) < 3:
            msg = f"region {index} (Id={region.get('Id')}) has {len(points)} vertices, skipped"
            result.skipped += 1
            result.warnings.append(msg)
            log.warning(f"{os.path.basename(str(path))}: {msg}")
            continue
        result.polygons.append(np.asarray(points, dtype=np.float64))

    log.debug(f"Parsed {len(result.polygons)} regions from {path} ({result.skipped} skipped)")
    return result


def rasterize(polys, width, height) -> np.ndarray:
    """
    Paint polygon k (1-based) with id k using the even-odd rule sampled at
    pixel centres (col + 0.5, row + 0.5). Later polygons overwrite earlier ones;
    vertices outside the raster are clipped.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"raster size must be positive, got {width}x{height}")

    polygons = polys.polygons if isinstance(polys, AnnotationPolygons) else polys
    labels = np.zeros((height, width), dtype=np.int32)

    for k, poly in enumerate(polygons, start=1):
        poly = np.asarray(poly, dtype=np.float64)
        c0 = max(int(np.floor(poly[:, 0].min())) - 1, 0)
        c1 = min(int(np.ceil(poly[:, 0].max())) + 1, width)
        r0 = max(int(np.floor(poly[:, 1].min())) - 1, 0)
        r1 = min(int(np.ceil(poly[:, 1].max())) + 1, height)
        if c0 >= c1 or r0 >= r1:
            continue

        ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64) + 0.5
        inside = np.zeros(xs.shape, dtype=bool)
        xj, yj = poly[-1]
        for xi, yi in poly:
            # Crossing test; same predicate as the classic per-point PNPOLY.
            crosses = (yi > ys) != (yj > ys)
            if np.any(crosses):
                with np.errstate(divide="ignore", invalid="ignore"):
                    x_cross = (xj - xi) * (ys - yi) / (yj - yi) + xi
                inside ^= crosses & (xs < x_cross)
            xj, yj = xi, yi

        labels[r0:r1, c0:c1][inside] = k

    return labels


# ─── Manifests ────────────────────────────────────────────

def read_manifest(path) -> list:
    """
    Read a CSV manifest with header `image,annotation` (annotation optional).
    Relative paths resolve against the manifest's directory.
    Returns a list of (image_path, annotation_path_or_None).
    """
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames or MANIFEST_HEADER[0] not in reader.fieldnames:
            raise ValueError(f"{path}: manifest needs a header with an '{MANIFEST_HEADER[0]}' column")
        for line_no, row in enumerate(reader, start=2):
            image = (row.get("image") or "").strip()
            if not image:
                raise ValueError(f"{path}:{line_no}: empty image path")
            annotation = (row.get("annotation") or "").strip() or None
            rows.append((
                os.path.join(base, image),
                os.path.join(base, annotation) if annotation else None,
            ))
    return rows


def load_ground_truth(path, shape=None) -> np.ndarray:
    """Ground truth from a label PNG, or from ImageScope XML rasterized to `shape`."""
    if str(path).lower().endswith(".xml"):
        if shape is None:
            raise ValueError(f"{path}: XML ground truth needs the target raster size")
        height, width = shape
        return rasterize(parse_annotation_xml(path), width, height)
    return load_labelmap(path)
