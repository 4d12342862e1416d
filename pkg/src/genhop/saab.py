"""Saab whitening transform, its exact inverse, and the two-hop cascade.

One Saab unit splits each local block into a DC (constant) response and PCA
responses of the DC-removed remainder.  The kernels form an orthonormal basis
of the block space, so the inverse transform (coloring) is the transpose and
forward-then-inverse is exact when no channel is discarded.

The cascade stacks two such units.  Hop 2 runs channel-wise: each retained
hop-1 channel gets its own basis fitted on that channel's blocks alone.  Child
channels are ranked globally by (parent energy share) x (child energy share),
and the lowest-dimensional output keeps only the top-ranked children.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import helmert

from .errors import DimensionMismatchError, InsufficientSamplesError
from .tensor import BlockSpec, batch_blocks_to_rows, batch_rows_to_blocks

# Below this total variance the data is treated as constant and energy
# shares degrade to zeros instead of dividing by ~0.
_ENERGY_FLOOR = 1e-300


def _fix_signs(kernels: np.ndarray) -> np.ndarray:
    """Flip each kernel so its largest-magnitude entry is positive."""
    lead = np.take_along_axis(
        kernels, np.argmax(np.abs(kernels), axis=1)[:, None], axis=1
    )[:, 0]
    return kernels * np.where(lead < 0.0, -1.0, 1.0)[:, None]


@dataclass(frozen=True)
class SaabBasis:
    """One whitening unit: DC kernel, AC kernel rows, per-channel energies.

    ``energies[0]`` is the variance of the DC response over the training
    blocks; ``energies[1:]`` are the AC eigenvalues in descending order.
    """

    dc_kernel: np.ndarray
    ac_kernels: np.ndarray
    energies: np.ndarray

    @property
    def block_dim(self) -> int:
        return self.dc_kernel.shape[0]

    def kernels(self) -> np.ndarray:
        """Full (N, N) orthonormal kernel matrix, DC row first."""
        return np.vstack([self.dc_kernel[None, :], self.ac_kernels])

    def energy_shares(self) -> np.ndarray:
        """Energies normalized to sum 1 (all zeros when degenerate)."""
        total = float(self.energies.sum())
        if total <= _ENERGY_FLOOR:
            return np.zeros_like(self.energies)
        return self.energies / total


def fit_saab(blocks: np.ndarray) -> SaabBasis:
    """Fit a Saab basis on a (num_samples, N) matrix of block rows.

    The DC kernel is the unit constant vector.  AC kernels diagonalize the
    second-moment matrix of the DC-removed rows, computed in the explicit
    (N-1)-dimensional DC-complement; no mean is subtracted beyond DC removal.
    Rank-deficient data still yields a complete orthonormal basis, with zero
    energy on the null directions.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2:
        raise DimensionMismatchError(f"expected 2-D sample matrix, got shape {blocks.shape}")
    n_samples, n_dim = blocks.shape
    if n_dim < 2:
        raise DimensionMismatchError("block dimension must be at least 2")
    if n_samples < n_dim:
        raise InsufficientSamplesError(
            f"need at least {n_dim} samples to fit a {n_dim}-dim basis, got {n_samples}"
        )

    basis = helmert(n_dim, full=True)  # row 0 is the unit constant vector
    dc_kernel = basis[0]
    complement = basis[1:]

    dc_coef = blocks @ dc_kernel
    ac_proj = blocks @ complement.T  # DC-removed rows expressed in the complement
    second_moment = ac_proj.T @ ac_proj / n_samples
    eigval, eigvec = np.linalg.eigh(second_moment)
    order = np.argsort(eigval, kind="stable")[::-1]
    eigval = np.clip(eigval[order], 0.0, None)
    ac_kernels = _fix_signs(eigvec[:, order].T @ complement)

    energies = np.concatenate([[np.var(dc_coef)], eigval])
    return SaabBasis(dc_kernel=dc_kernel, ac_kernels=ac_kernels, energies=energies)


def _check_basis_input(t: np.ndarray, basis: SaabBasis, spec: BlockSpec) -> None:
    n_dim = spec.block_h * spec.block_w * t.shape[-1]
    if n_dim != basis.block_dim:
        raise DimensionMismatchError(
            f"basis fitted on {basis.block_dim}-dim blocks, input blocks are {n_dim}-dim"
        )


def batch_saab_forward(x: np.ndarray, basis: SaabBasis, spec: BlockSpec) -> np.ndarray:
    """Whiten a batch (n, h, w, c) into (n, h/bh, w/bw, N) responses."""
    _check_basis_input(x, basis, spec)
    n, h, w, _ = x.shape
    coeffs = batch_blocks_to_rows(x, spec) @ basis.kernels().T
    return coeffs.reshape(n, h // spec.block_h, w // spec.block_w, basis.block_dim)


def batch_saab_inverse(x: np.ndarray, basis: SaabBasis, spec: BlockSpec) -> np.ndarray:
    """Color a batch (n, h, w, N) of responses back into (n, h*bh, w*bw, c)."""
    n, h, w, n_chan = x.shape
    if n_chan != basis.block_dim:
        raise DimensionMismatchError(
            f"expected {basis.block_dim} response channels, got {n_chan}"
        )
    out_c = basis.block_dim // (spec.block_h * spec.block_w)
    rows = x.reshape(n * h * w, n_chan) @ basis.kernels()
    return batch_rows_to_blocks(rows, spec, n, h * spec.block_h, w * spec.block_w, out_c)


def saab_forward(t: np.ndarray, basis: SaabBasis, spec: BlockSpec) -> np.ndarray:
    """Whiten one (h, w, c) tensor; output channels are ordered [DC, AC1, ...]."""
    return batch_saab_forward(t[None], basis, spec)[0]


def saab_inverse(t: np.ndarray, basis: SaabBasis, spec: BlockSpec) -> np.ndarray:
    """Exact inverse of :func:`saab_forward` when all N channels are present."""
    return batch_saab_inverse(t[None], basis, spec)[0]


@dataclass(frozen=True)
class HopConfig:
    """Block geometry plus the low/high frequency channel split of one hop.

    ``keep_low`` channels feed the next stage; the next ``keep_high`` are
    set aside during analysis and re-estimated during synthesis; anything
    ranked below both is dropped for good.
    """

    block: BlockSpec
    keep_low: int
    keep_high: int

    def __post_init__(self):
        if self.keep_low < 1:
            raise ValueError("keep_low must be at least 1")
        if self.keep_high < 0:
            raise ValueError("keep_high must be non-negative")


@dataclass(frozen=True)
class CascadeModel:
    """Two fitted hops plus the global ranking of hop-2 child channels."""

    input_shape: tuple[int, int, int]
    cfg1: HopConfig
    cfg2: HopConfig
    hop1: SaabBasis
    hop1_rank: np.ndarray  # hop-1 channels by descending energy
    hop2: tuple[SaabBasis, ...]  # one basis per forwarded hop-1 channel
    channel_order: np.ndarray  # hop-2 children by descending global energy

    @property
    def s1_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.input_shape
        return (h // self.cfg1.block.block_h, w // self.cfg1.block.block_w, self.hop1.block_dim)

    @property
    def s4_shape(self) -> tuple[int, int, int]:
        h1, w1, _ = self.s1_shape
        return (h1 // self.cfg2.block.block_h, w1 // self.cfg2.block.block_w, self.cfg2.keep_low)

    @property
    def hf1_shape(self) -> tuple[int, int, int]:
        h1, w1, _ = self.s1_shape
        return (h1, w1, self.cfg1.keep_high)

    @property
    def hf2_shape(self) -> tuple[int, int, int]:
        h4, w4, _ = self.s4_shape
        return (h4, w4, self.cfg2.keep_high)

    @property
    def child_count(self) -> int:
        return self.cfg1.keep_low * self.hop2[0].block_dim


def _validate_hop_partition(cfg: HopConfig, total: int, hop: int) -> None:
    if cfg.keep_low + cfg.keep_high > total:
        raise ValueError(
            f"hop {hop}: keep_low + keep_high = {cfg.keep_low + cfg.keep_high} "
            f"exceeds the {total} output channels"
        )


def fit_cascade(images: np.ndarray, cfg1: HopConfig, cfg2: HopConfig) -> CascadeModel:
    """Fit both hops on an (n, h, w, c) image stack.

    Hop 1 pools blocks across every image.  Hop 2 fits one basis per
    forwarded hop-1 channel on that channel's blocks alone, and ranks all
    children by the product of parent and child energy shares.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise DimensionMismatchError(f"expected (n, h, w, c) stack, got shape {images.shape}")
    n, h, w, c = images.shape

    hop1 = fit_saab(batch_blocks_to_rows(images, cfg1.block))
    _validate_hop_partition(cfg1, hop1.block_dim, hop=1)
    hop1_rank = np.argsort(hop1.energies, kind="stable")[::-1].copy()

    y1 = batch_saab_forward(images, hop1, cfg1.block)
    forwarded = y1[..., hop1_rank[: cfg1.keep_low]]

    hop2 = []
    child_energy = []
    parent_share = hop1.energy_shares()
    for j in range(cfg1.keep_low):
        basis = fit_saab(batch_blocks_to_rows(forwarded[..., j : j + 1], cfg2.block))
        hop2.append(basis)
        child_energy.append(parent_share[hop1_rank[j]] * basis.energy_shares())
    child_energy = np.concatenate(child_energy)
    _validate_hop_partition(cfg2, child_energy.shape[0], hop=2)
    channel_order = np.argsort(child_energy, kind="stable")[::-1].copy()

    return CascadeModel(
        input_shape=(h, w, c),
        cfg1=cfg1,
        cfg2=cfg2,
        hop1=hop1,
        hop1_rank=hop1_rank,
        hop2=tuple(hop2),
        channel_order=channel_order,
    )


def _check_stack(x: np.ndarray, shape: tuple[int, int, int], what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != shape:
        raise DimensionMismatchError(f"expected {what} stack of shape (n, {shape}), got {x.shape}")
    return x


def batch_cascade_forward(
    x: np.ndarray, m: CascadeModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run both hops over an (n, h, w, c) stack.

    Returns ``(s4, hf1, hf2)``: the globally top-ranked hop-2 children, the
    hop-1 channels ranked just below the forwarded ones, and the hop-2
    children ranked just below s4's.  Lower-ranked channels are dropped.
    """
    x = _check_stack(x, m.input_shape, "image")
    y1 = batch_saab_forward(x, m.hop1, m.cfg1.block)
    hf1 = y1[..., m.hop1_rank[m.cfg1.keep_low : m.cfg1.keep_low + m.cfg1.keep_high]]

    children = np.concatenate(
        [
            batch_saab_forward(y1[..., m.hop1_rank[j] : m.hop1_rank[j] + 1], basis, m.cfg2.block)
            for j, basis in enumerate(m.hop2)
        ],
        axis=-1,
    )
    s4 = children[..., m.channel_order[: m.cfg2.keep_low]]
    hf2 = children[..., m.channel_order[m.cfg2.keep_low : m.cfg2.keep_low + m.cfg2.keep_high]]
    return s4, np.ascontiguousarray(hf1), np.ascontiguousarray(hf2)


def batch_invert_hop2(s4: np.ndarray, hf2: np.ndarray, m: CascadeModel) -> np.ndarray:
    """Undo hop 2: (s4, hf2) stacks -> the forwarded hop-1 channels.

    Children that were dropped during analysis are zero-filled.  Output
    channels are in hop-1 rank order (channel j = j-th forwarded channel).
    """
    s4 = _check_stack(s4, m.s4_shape, "s4")
    hf2 = _check_stack(hf2, m.hf2_shape, "hf2")
    n, h4, w4, _ = s4.shape
    children = np.zeros((n, h4, w4, m.child_count))
    children[..., m.channel_order[: m.cfg2.keep_low]] = s4
    children[..., m.channel_order[m.cfg2.keep_low : m.cfg2.keep_low + m.cfg2.keep_high]] = hf2

    per_parent = m.hop2[0].block_dim
    return np.concatenate(
        [
            batch_saab_inverse(
                children[..., j * per_parent : (j + 1) * per_parent], basis, m.cfg2.block
            )
            for j, basis in enumerate(m.hop2)
        ],
        axis=-1,
    )


def batch_invert_hop1(low: np.ndarray, hf1: np.ndarray, m: CascadeModel) -> np.ndarray:
    """Undo hop 1: forwarded channels plus hf1 -> image stack (dropped = 0)."""
    h1, w1, _ = m.s1_shape
    low = _check_stack(low, (h1, w1, m.cfg1.keep_low), "hop-1 low-frequency")
    hf1 = _check_stack(hf1, m.hf1_shape, "hf1")
    n = low.shape[0]
    y1 = np.zeros((n, h1, w1, m.hop1.block_dim))
    y1[..., m.hop1_rank[: m.cfg1.keep_low]] = low
    y1[..., m.hop1_rank[m.cfg1.keep_low : m.cfg1.keep_low + m.cfg1.keep_high]] = hf1
    return batch_saab_inverse(y1, m.hop1, m.cfg1.block)


def cascade_forward(t: np.ndarray, m: CascadeModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-image :func:`batch_cascade_forward`."""
    s4, hf1, hf2 = batch_cascade_forward(t[None], m)
    return s4[0], hf1[0], hf2[0]


def cascade_inverse(
    s4: np.ndarray, hf2: np.ndarray, hf1: np.ndarray, m: CascadeModel
) -> np.ndarray:
    """Single-image full inverse: hop-2 coloring, then hop-1 coloring."""
    low = batch_invert_hop2(s4[None], hf2[None], m)
    return batch_invert_hop1(low, hf1[None], m)[0]
