"""Locally linear embedding over small spatial regions.

Synthesis discards high-frequency channels during analysis and has to invent
them again.  Each small region of the feature grid keeps a bank of paired
(low-frequency, high-frequency) training features; a generated low-frequency
region is reconstructed as an affine combination of its nearest bank rows,
which simultaneously projects it onto the training manifold (the adjusted LF)
and transfers the paired high-frequency detail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatchError

_GRAM_REG = 1e-3  # relative diagonal loading of the local Gram system
_DISTANCE_RATIO = 3.0  # adaptive k: drop neighbors beyond this multiple of the nearest
_QUERY_CHUNK = 1024


@dataclass(frozen=True)
class Codebook:
    """Paired LF/HF training bank for one spatial region."""

    lf_bank: np.ndarray  # (entries, d_lf)
    hf_bank: np.ndarray  # (entries, d_hf)
    k_max: int

    def __post_init__(self):
        if self.lf_bank.shape[0] != self.hf_bank.shape[0] or self.lf_bank.shape[0] == 0:
            raise DimensionMismatchError("LF and HF banks must pair row-for-row")
        if not 1 <= self.k_max <= 3:
            raise ValueError(f"k_max must be in 1..3, got {self.k_max}")


def lle_weights(query: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Affine reconstruction weights of ``query`` from its k neighbor rows.

    Minimizes the reconstruction error subject to the weights summing to 1,
    via the regularized local Gram system.  Weights may be negative.
    """
    z = neighbors - query
    g = z @ z.T
    k = neighbors.shape[0]
    trace = np.trace(g)
    g.flat[:: k + 1] += _GRAM_REG * trace / k if trace > 0.0 else _GRAM_REG
    w = np.linalg.solve(g, np.ones(k))
    return w / w.sum()


def select_neighbors(query: np.ndarray, bank: np.ndarray, k_max: int) -> np.ndarray:
    """Indices of the adaptive nearest neighbors of ``query`` in ``bank``.

    Starts from the ``k_max`` nearest rows, then drops any whose distance
    exceeds 3x the nearest distance (an exact bank hit therefore keeps only
    exact hits).  Ties resolve toward lower row indices.
    """
    d = np.sqrt(((bank - query) ** 2).sum(axis=1))
    order = np.argsort(d, kind="stable")[:k_max]
    return order[d[order] <= _DISTANCE_RATIO * d[order[0]]]


def recover(query_lf: np.ndarray, book: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Project one LF region query onto the bank manifold and transfer its HF.

    Returns ``(adjusted_lf, estimated_hf)``: the affine combination of the
    selected neighbors' LF rows (which replaces the query) and the same
    combination of their paired HF rows.
    """
    query_lf = np.asarray(query_lf, dtype=np.float64)
    if query_lf.shape != (book.lf_bank.shape[1],):
        raise DimensionMismatchError(
            f"query has dimension {query_lf.shape}, bank rows have {book.lf_bank.shape[1]}"
        )
    idx = select_neighbors(query_lf, book.lf_bank, book.k_max)
    w = lle_weights(query_lf, book.lf_bank[idx])
    return w @ book.lf_bank[idx], w @ book.hf_bank[idx]


def recover_batch(queries: np.ndarray, book: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`recover` over a (q, d_lf) query matrix."""
    queries = np.asarray(queries, dtype=np.float64)
    adjusted = np.empty((queries.shape[0], book.lf_bank.shape[1]))
    estimated = np.empty((queries.shape[0], book.hf_bank.shape[1]))
    k = min(book.k_max, book.lf_bank.shape[0])
    for start in range(0, queries.shape[0], _QUERY_CHUNK):
        chunk = queries[start : start + _QUERY_CHUNK]
        d = cdist(chunk, book.lf_bank)
        if k < book.lf_bank.shape[0]:
            cand = np.argpartition(d, k - 1, axis=1)[:, :k]
        else:
            cand = np.broadcast_to(np.arange(k), (chunk.shape[0], k)).copy()
        for i, q in enumerate(chunk):
            row = cand[i][np.lexsort((cand[i], d[i, cand[i]]))]
            idx = row[d[i, row] <= _DISTANCE_RATIO * d[i, row[0]]]
            w = lle_weights(q, book.lf_bank[idx])
            adjusted[start + i] = w @ book.lf_bank[idx]
            estimated[start + i] = w @ book.hf_bank[idx]
    return adjusted, estimated


def region_anchors(size: int, region: int) -> list[int]:
    """Anchor offsets tiling ``size`` cells with ``region``-cell windows.

    Non-divisible grids get a final window anchored flush to the edge,
    overlapping its predecessor; overlapped cells are averaged on scatter.
    """
    if region > size:
        raise DimensionMismatchError(f"region {region} larger than grid extent {size}")
    anchors = list(range(0, size - region + 1, region))
    if anchors[-1] != size - region:
        anchors.append(size - region)
    return anchors


@dataclass(frozen=True)
class CodebookGrid:
    """One codebook per region window tiling a (grid_h, grid_w) feature grid."""

    grid_h: int
    grid_w: int
    region_h: int
    region_w: int
    lf_channels: int
    hf_channels: int
    k_max: int
    books: tuple[Codebook, ...]  # raster order over (row anchors) x (col anchors)

    @property
    def anchors(self) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in region_anchors(self.grid_h, self.region_h)
            for c in region_anchors(self.grid_w, self.region_w)
        ]


def build_codebook_grid(
    lf_stack: np.ndarray, hf_stack: np.ndarray, region: int, k_max: int
) -> CodebookGrid:
    """Build per-region codebooks from paired (n, h, w, c) training stacks.

    ``region=1`` is the per-location mode: one bank per grid cell, used when
    bigger windows would make banks too large.
    """
    lf_stack = np.asarray(lf_stack, dtype=np.float64)
    hf_stack = np.asarray(hf_stack, dtype=np.float64)
    if lf_stack.shape[0] != hf_stack.shape[0] or lf_stack.shape[0] == 0:
        raise DimensionMismatchError("LF and HF stacks must pair sample-for-sample")
    if lf_stack.shape[1:3] != hf_stack.shape[1:3]:
        raise DimensionMismatchError("LF and HF stacks must share the spatial grid")
    n, h, w, c_lf = lf_stack.shape
    c_hf = hf_stack.shape[3]
    books = []
    for r in region_anchors(h, region):
        for c in region_anchors(w, region):
            books.append(
                Codebook(
                    lf_bank=lf_stack[:, r : r + region, c : c + region, :].reshape(n, -1).copy(),
                    hf_bank=hf_stack[:, r : r + region, c : c + region, :].reshape(n, -1).copy(),
                    k_max=k_max,
                )
            )
    return CodebookGrid(
        grid_h=h,
        grid_w=w,
        region_h=region,
        region_w=region,
        lf_channels=c_lf,
        hf_channels=c_hf,
        k_max=k_max,
        books=tuple(books),
    )


def recover_field_batch(
    grid: CodebookGrid, lf_fields: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Run every region's recovery over a (q, h, w, c_lf) stack of LF fields.

    Returns the manifold-adjusted LF stack and the estimated HF stack, with
    cells covered by overlapping edge regions averaged.
    """
    lf_fields = np.asarray(lf_fields, dtype=np.float64)
    q = lf_fields.shape[0]
    if lf_fields.shape[1:] != (grid.grid_h, grid.grid_w, grid.lf_channels):
        raise DimensionMismatchError(
            f"expected LF fields of shape {(grid.grid_h, grid.grid_w, grid.lf_channels)}, "
            f"got {lf_fields.shape[1:]}"
        )
    rh, rw = grid.region_h, grid.region_w
    adj_sum = np.zeros((q, grid.grid_h, grid.grid_w, grid.lf_channels))
    hf_sum = np.zeros((q, grid.grid_h, grid.grid_w, grid.hf_channels))
    hits = np.zeros((grid.grid_h, grid.grid_w, 1))
    for (r, c), book in zip(grid.anchors, grid.books):
        queries = lf_fields[:, r : r + rh, c : c + rw, :].reshape(q, -1)
        adjusted, estimated = recover_batch(queries, book)
        adj_sum[:, r : r + rh, c : c + rw, :] += adjusted.reshape(q, rh, rw, grid.lf_channels)
        hf_sum[:, r : r + rh, c : c + rw, :] += estimated.reshape(q, rh, rw, grid.hf_channels)
        hits[r : r + rh, c : c + rw, :] += 1.0
    return adj_sum / hits, hf_sum / hits


def recover_field(grid: CodebookGrid, lf_field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-field :func:`recover_field_batch`."""
    adjusted, estimated = recover_field_batch(grid, lf_field[None])
    return adjusted[0], estimated[0]
