"""
Block Grid - Non-overlapping block tiling and per-block PCA colour-to-intensity.

The same tiling serves the 200x200 tiles of the false-positive filter and
the self-training pass.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Block:
    index: int
    row: int          # block row in the grid
    col: int          # block column in the grid
    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def slices(self):
        return slice(self.r0, self.r1), slice(self.c0, self.c1)

    @property
    def shape(self):
        return self.r1 - self.r0, self.c1 - self.c0


@dataclass(frozen=True)
class BlockGrid:
    block_size: int
    height: int
    width: int
    blocks: tuple

    @property
    def grid_shape(self):
        return -(-self.height // self.block_size), -(-self.width // self.block_size)

    def block_of(self, row, col) -> int:
        """Index of the block containing pixel (row, col)."""
        n_cols = self.grid_shape[1]
        return (int(row) // self.block_size) * n_cols + int(col) // self.block_size

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)


@dataclass(frozen=True)
class IntensityBlock:
    block: Block
    intensity: np.ndarray     # (h, w) float in [0, 1], lighter = higher
    eigenvector: np.ndarray   # unit leading eigenvector after sign selection
    flipped: bool             # sign was flipped to agree with LAB lightness
    flat: bool                # zero-variance block; treated as background
    spread: float             # 1st-99th percentile range of raw projections


def decompose(image, block_size) -> BlockGrid:
    """Origin-aligned row-major tiling; edge blocks keep the remainder."""
    if block_size < 8:
        raise ValueError(f"block_size must be >= 8, got {block_size}")
    height, width = np.asarray(image).shape[:2]

    blocks = []
    for i, r0 in enumerate(range(0, height, block_size)):
        for j, c0 in enumerate(range(0, width, block_size)):
            blocks.append(Block(
                index=len(blocks), row=i, col=j,
                r0=r0, r1=min(r0 + block_size, height),
                c0=c0, c1=min(c0 + block_size, width),
            ))
    return BlockGrid(block_size=block_size, height=height, width=width, blocks=tuple(blocks))


def block_pca_intensity(pixels, l_ref, block=None) -> IntensityBlock:
    """
    Project a block's colours on their leading principal axis.

    The eigenvector sign is chosen so projections correlate non-negatively with
    the LAB lightness `l_ref`; a zero correlation keeps the orientation whose
    largest-magnitude component is positive. Projections are rescaled to [0, 1].
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    shape = pixels.shape[:-1]
    colors = pixels.reshape(-1, pixels.shape[-1])
    lightness = np.asarray(l_ref, dtype=np.float64).reshape(-1)

    if colors.shape[0] < 2:
        return _flat(block, shape, colors.shape[1])

    centered = colors - colors.mean(axis=0)
    cov = centered.T @ centered / colors.shape[0]
    if np.trace(cov) <= 1e-12:
        return _flat(block, shape, colors.shape[1])

    _, vectors = np.linalg.eigh(cov)
    vector = vectors[:, -1]
    if vector[np.argmax(np.abs(vector))] < 0:
        vector = -vector

    projection = centered @ vector
    flipped = False
    if np.std(lightness) > 0 and np.std(projection) > 0:
        corr = np.corrcoef(projection, lightness)[0, 1]
        if corr < 0:
            vector, projection, flipped = -vector, -projection, True

    lo, hi = projection.min(), projection.max()
    if hi - lo <= 1e-12:
        return _flat(block, shape, colors.shape[1])

    p1, p99 = np.percentile(projection, [1, 99])
    intensity = ((projection - lo) / (hi - lo)).reshape(shape)
    return IntensityBlock(
        block=block, intensity=intensity, eigenvector=vector,
        flipped=flipped, flat=False, spread=float(p99 - p1),
    )


def _flat(block, shape, channels):
    vector = np.zeros(channels)
    vector[0] = 1.0
    return IntensityBlock(
        block=block, intensity=np.full(shape, 0.5), eigenvector=vector,
        flipped=False, flat=True, spread=0.0,
    )
