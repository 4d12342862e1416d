"""Image tensors and the block gather/scatter primitives every transform uses.

An image (or intermediate feature map) is a dense ``(height, width, channels)``
float64 array in row-major order.  Pixel intensities enter the pipeline as
reals in [0, 1] (8-bit inputs divided by 255); every downstream statistic
assumes that scale.  Batches are plain ``(n, height, width, channels)`` stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError


@dataclass(frozen=True)
class BlockSpec:
    """Non-overlapping block geometry: stride must equal the block size."""

    block_h: int
    block_w: int
    stride_h: int = 0
    stride_w: int = 0

    def __post_init__(self):
        if self.stride_h == 0:
            object.__setattr__(self, "stride_h", self.block_h)
        if self.stride_w == 0:
            object.__setattr__(self, "stride_w", self.block_w)
        if self.block_h < 1 or self.block_w < 1:
            raise ValueError(f"block size must be positive, got {self.block_h}x{self.block_w}")
        if (self.stride_h, self.stride_w) != (self.block_h, self.block_w):
            raise ValueError("blocks must be non-overlapping (stride == block size)")


def check_image(t: np.ndarray) -> np.ndarray:
    """Validate one (h, w, c) tensor at a pipeline boundary."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or min(t.shape) < 1:
        raise DimensionMismatchError(f"expected (h, w, c) tensor, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("image tensor contains non-finite values")
    return t


def batch_blocks_to_rows(x: np.ndarray, spec: BlockSpec) -> np.ndarray:
    """Gather every block of every image in ``x`` (n, h, w, c) into matrix rows.

    Returns an ``(n * num_blocks, block_h * block_w * c)`` matrix.  Row order is
    image-major, then blocks in raster order; within a row the block's entries
    keep (h, w, c) raster order.  The gather is a pure relayout, so
    :func:`batch_rows_to_blocks` inverts it bit-exactly.
    """
    n, h, w, c = x.shape
    bh, bw = spec.block_h, spec.block_w
    if h % bh != 0 or w % bw != 0:
        raise DimensionMismatchError(
            f"image {h}x{w} not divisible by {bh}x{bw} blocks"
        )
    rows = x.reshape(n, h // bh, bh, w // bw, bw, c)
    rows = rows.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(rows).reshape(n * (h // bh) * (w // bw), bh * bw * c)


def batch_rows_to_blocks(
    m: np.ndarray, spec: BlockSpec, n: int, out_h: int, out_w: int, out_c: int
) -> np.ndarray:
    """Scatter rows produced by :func:`batch_blocks_to_rows` back into images."""
    bh, bw = spec.block_h, spec.block_w
    if out_h % bh != 0 or out_w % bw != 0:
        raise DimensionMismatchError(
            f"target {out_h}x{out_w} not divisible by {bh}x{bw} blocks"
        )
    nb = (out_h // bh) * (out_w // bw)
    if m.shape != (n * nb, bh * bw * out_c):
        raise DimensionMismatchError(
            f"expected matrix of shape {(n * nb, bh * bw * out_c)}, got {m.shape}"
        )
    x = m.reshape(n, out_h // bh, out_w // bw, bh, bw, out_c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x).reshape(n, out_h, out_w, out_c)


def blocks_to_rows(t: np.ndarray, spec: BlockSpec) -> np.ndarray:
    """Single-image convenience wrapper around :func:`batch_blocks_to_rows`."""
    if t.ndim != 3:
        raise DimensionMismatchError(f"expected (h, w, c) tensor, got shape {t.shape}")
    return batch_blocks_to_rows(t[None], spec)


def rows_to_blocks(
    m: np.ndarray, spec: BlockSpec, out_h: int, out_w: int, out_c: int
) -> np.ndarray:
    """Single-image convenience wrapper around :func:`batch_rows_to_blocks`."""
    return batch_rows_to_blocks(m, spec, 1, out_h, out_w, out_c)[0]
