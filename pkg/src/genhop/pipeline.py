"""End-to-end orchestration: train, generate, save, load.

Training wires the stages together: optional RGB decorrelation, the two-hop
whitening cascade, the seed-space density model, and the per-stage LLE
codebooks that pair low-frequency features with the high-frequency detail
discarded during analysis.  Generation walks the chain backwards from white
noise and clamps the result to [0, 1].
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import model_io
from .errors import DimensionMismatchError, InsufficientSamplesError
from .lle import Codebook, CodebookGrid, build_codebook_grid, recover_field_batch
from .saab import (
    BlockSpec,
    CascadeModel,
    HopConfig,
    SaabBasis,
    batch_cascade_forward,
    batch_invert_hop1,
    batch_invert_hop2,
    fit_cascade,
)
from .seed import (
    CdfTable,
    ChannelPCA,
    ClusterDensity,
    ClusterModel,
    SeedModel,
    SpatialPCA,
    fit_seed_model,
    sample_seed,
)

logger = logging.getLogger(__name__)

MIN_TRAINING_IMAGES = 100


@dataclass(frozen=True)
class GenHopConfig:
    """Full hyper-parameter snapshot; everything a training run depends on."""

    preset: str
    image_h: int
    image_w: int
    image_channels: int  # native input channels (1 grayscale, 3 RGB)
    k1_low: int
    k1_high: int
    k2_low: int
    k2_high: int
    gamma: float
    clusters: int
    hop1_block: int = 2
    hop2_block: int = 2
    k_max: int = 3
    s4_region: int = 2
    s1_region: int = 3  # 1 = per-location mode
    train_seed: int = 0

    @property
    def color_enabled(self) -> bool:
        return self.image_channels == 3

    @property
    def cascade_channels(self) -> int:
        # RGB inputs are decorrelated first and the weakest channel dropped
        return 2 if self.color_enabled else self.image_channels

    def hop_configs(self) -> tuple[HopConfig, HopConfig]:
        return (
            HopConfig(BlockSpec(self.hop1_block, self.hop1_block), self.k1_low, self.k1_high),
            HopConfig(BlockSpec(self.hop2_block, self.hop2_block), self.k2_low, self.k2_high),
        )


PRESETS: dict[str, GenHopConfig] = {
    "mnist": GenHopConfig(
        preset="mnist", image_h=28, image_w=28, image_channels=1,
        k1_low=2, k1_high=1, k2_low=4, k2_high=3, gamma=0.01, clusters=10,
    ),
    "fashion": GenHopConfig(
        preset="fashion", image_h=28, image_w=28, image_channels=1,
        k1_low=2, k1_high=2, k2_low=4, k2_high=4, gamma=0.01, clusters=10,
    ),
    "celeba": GenHopConfig(
        preset="celeba", image_h=32, image_w=32, image_channels=3,
        k1_low=3, k1_high=1, k2_low=4, k2_high=4, gamma=0.03, clusters=50,
        s1_region=1,
    ),
}


def preset_config(name: str, **overrides) -> GenHopConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r} (choose from {sorted(PRESETS)})")
    return replace(PRESETS[name], **overrides)


@dataclass(frozen=True)
class ColorModel:
    """Pixel-wise RGB decorrelation and the per-pixel banks that undo it."""

    mean: np.ndarray  # (3,)
    basis: np.ndarray  # (3, 3) orthonormal rows, descending eigenvalue
    eigenvalues: np.ndarray  # (3,)
    books: CodebookGrid  # per-pixel (P, Q) -> RGB

    def to_pq(self, images: np.ndarray) -> np.ndarray:
        return ((images - self.mean) @ self.basis.T)[..., :2]

    def recover_rgb(self, pq: np.ndarray) -> np.ndarray:
        _, rgb = recover_field_batch(self.books, pq)
        return rgb


def fit_pixel_pca(images: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PCA of the (3,) pixel color vectors pooled over all images."""
    pixels = images.reshape(-1, 3)
    mean = pixels.mean(axis=0)
    xc = pixels - mean
    cov = xc.T @ xc / max(len(pixels) - 1, 1)
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval, kind="stable")[::-1]
    basis = eigvec[:, order].T
    lead = np.take_along_axis(basis, np.argmax(np.abs(basis), axis=1)[:, None], axis=1)[:, 0]
    basis = basis * np.where(lead < 0.0, -1.0, 1.0)[:, None]
    return mean, basis, np.clip(eigval[order], 0.0, None)


@dataclass(frozen=True)
class GenHopModel:
    """Everything generation needs: cascade, seed model, codebooks, color."""

    config: GenHopConfig
    cascade: CascadeModel
    seed: SeedModel
    s4_books: CodebookGrid  # seed-space LF -> hop-2 high-frequency channels
    s1_books: CodebookGrid  # reconstructed hop-1 LF field -> hop-1 HF channels
    color: ColorModel | None = None

    @property
    def output_channels(self) -> int:
        return self.config.image_channels


def _validate_training_stack(images: np.ndarray, config: GenHopConfig) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    expected = (config.image_h, config.image_w, config.image_channels)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise DimensionMismatchError(
            f"expected image stack of shape (n, {expected}), got {images.shape}"
        )
    if images.shape[0] < MIN_TRAINING_IMAGES:
        raise InsufficientSamplesError(
            f"training needs at least {MIN_TRAINING_IMAGES} images, got {images.shape[0]}"
        )
    if not np.all(np.isfinite(images)):
        raise ValueError("training images contain non-finite values")
    if images.min() < -1e-9 or images.max() > 1.0 + 1e-9:
        raise ValueError("training images must be scaled to [0, 1]")
    return images


def train(images: np.ndarray, config: GenHopConfig) -> GenHopModel:
    """Train a full model on an (n, h, w, c) stack of [0, 1] images."""
    images = _validate_training_stack(images, config)
    timer = _StageTimer()

    color = None
    work = images
    if config.color_enabled:
        mean, basis, eigval = fit_pixel_pca(images)
        pq = ((images - mean) @ basis.T)[..., :2]
        books = build_codebook_grid(pq, images, region=1, k_max=config.k_max)
        color = ColorModel(mean=mean, basis=basis, eigenvalues=eigval, books=books)
        work = pq
        timer.mark("color decorrelation")

    cfg1, cfg2 = config.hop_configs()
    cascade = fit_cascade(work, cfg1, cfg2)
    timer.mark("cascade fit")

    s4, hf1, hf2 = batch_cascade_forward(work, cascade)
    timer.mark("cascade forward")

    seed = fit_seed_model(s4, config.gamma, config.clusters, config.train_seed)
    timer.mark("seed model fit")

    s4_books = build_codebook_grid(s4, hf2, region=config.s4_region, k_max=config.k_max)
    # the stage-1 bank pairs hf1 with the same reconstructed LF field generation
    # will query: hop-2 inverse of (s4, hf2) with dropped children zero-filled
    s1_low = batch_invert_hop2(s4, hf2, cascade)
    s1_books = build_codebook_grid(s1_low, hf1, region=config.s1_region, k_max=config.k_max)
    timer.mark("codebook build")

    return GenHopModel(
        config=config, cascade=cascade, seed=seed,
        s4_books=s4_books, s1_books=s1_books, color=color,
    )


def generate(model: GenHopModel, count: int, master_seed: int) -> np.ndarray:
    """Draw ``count`` images; deterministic in (model, master_seed).

    Each sample index gets its own RNG stream derived from (master_seed,
    index), so any prefix of the batch is reproducible independently.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    h, w = model.config.image_h, model.config.image_w
    if count == 0:
        return np.zeros((0, h, w, model.output_channels))

    seeds = np.stack(
        [
            sample_seed(model.seed, np.random.default_rng(np.random.SeedSequence([master_seed, i])))
            for i in range(count)
        ]
    )
    adjusted_s4, hf2 = recover_field_batch(model.s4_books, seeds)
    low = batch_invert_hop2(adjusted_s4, hf2, model.cascade)
    adjusted_low, hf1 = recover_field_batch(model.s1_books, low)
    out = batch_invert_hop1(adjusted_low, hf1, model.cascade)
    if model.color is not None:
        out = model.color.recover_rgb(out)
    return np.clip(out, 0.0, 1.0)


class _StageTimer:
    def __init__(self):
        self._last = time.perf_counter()

    def mark(self, stage: str) -> None:
        now = time.perf_counter()
        logger.info("%s: %.2fs", stage, now - self._last)
        self._last = now


# ---------------------------------------------------------------------------
# serialization glue


def _basis_arrays(prefix: str, basis: SaabBasis, arrays: dict) -> None:
    arrays[f"{prefix}.dc"] = basis.dc_kernel
    arrays[f"{prefix}.ac"] = basis.ac_kernels
    arrays[f"{prefix}.energies"] = basis.energies


def _basis_from_arrays(prefix: str, arrays: dict) -> SaabBasis:
    return SaabBasis(
        dc_kernel=arrays[f"{prefix}.dc"],
        ac_kernels=arrays[f"{prefix}.ac"],
        energies=arrays[f"{prefix}.energies"],
    )


def _grid_state(prefix: str, grid: CodebookGrid, arrays: dict) -> dict:
    for i, book in enumerate(grid.books):
        arrays[f"{prefix}.b{i}.lf"] = book.lf_bank
        arrays[f"{prefix}.b{i}.hf"] = book.hf_bank
    return {
        "grid_h": grid.grid_h, "grid_w": grid.grid_w,
        "region_h": grid.region_h, "region_w": grid.region_w,
        "lf_channels": grid.lf_channels, "hf_channels": grid.hf_channels,
        "k_max": grid.k_max, "books": len(grid.books),
    }


def _grid_from_state(prefix: str, meta: dict, arrays: dict) -> CodebookGrid:
    books = tuple(
        Codebook(
            lf_bank=arrays[f"{prefix}.b{i}.lf"],
            hf_bank=arrays[f"{prefix}.b{i}.hf"],
            k_max=meta["k_max"],
        )
        for i in range(meta["books"])
    )
    return CodebookGrid(
        grid_h=meta["grid_h"], grid_w=meta["grid_w"],
        region_h=meta["region_h"], region_w=meta["region_w"],
        lf_channels=meta["lf_channels"], hf_channels=meta["hf_channels"],
        k_max=meta["k_max"], books=books,
    )


def model_to_state(model: GenHopModel) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {}
    cascade = model.cascade
    _basis_arrays("cascade.hop1", cascade.hop1, arrays)
    arrays["cascade.hop1_rank"] = cascade.hop1_rank
    for j, basis in enumerate(cascade.hop2):
        _basis_arrays(f"cascade.hop2.{j}", basis, arrays)
    arrays["cascade.channel_order"] = cascade.channel_order

    pca = model.seed.pca
    for j, ch in enumerate(pca.channels):
        arrays[f"seed.pca.ch{j}.mean"] = ch.mean
        arrays[f"seed.pca.ch{j}.components"] = ch.components
        arrays[f"seed.pca.ch{j}.eigenvalues"] = ch.eigenvalues
    clusters = model.seed.clusters
    arrays["seed.centroids"] = clusters.centroids
    arrays["seed.priors"] = clusters.priors
    table_sizes = []
    for j, density in enumerate(clusters.densities):
        arrays[f"seed.c{j}.mean"] = density.ica_mean
        arrays[f"seed.c{j}.unmixing"] = density.ica_unmixing
        for i, table in enumerate(density.tables):
            arrays[f"seed.c{j}.t{i}.values"] = table.values
            arrays[f"seed.c{j}.t{i}.levels"] = table.levels
        table_sizes.append(len(density.tables))

    meta = {
        "config": asdict(model.config),
        "cascade": {"input_shape": list(cascade.input_shape), "hop2_count": len(cascade.hop2)},
        "seed": {
            "gamma": pca.gamma,
            "grid_shape": list(pca.grid_shape),
            "channel_count": len(pca.channels),
            "cluster_count": len(clusters.densities),
            "table_counts": table_sizes,
        },
        "s4_books": _grid_state("s4", model.s4_books, arrays),
        "s1_books": _grid_state("s1", model.s1_books, arrays),
    }
    if model.color is not None:
        arrays["color.mean"] = model.color.mean
        arrays["color.basis"] = model.color.basis
        arrays["color.eigenvalues"] = model.color.eigenvalues
        meta["color_books"] = _grid_state("color", model.color.books, arrays)
    return meta, arrays


def model_from_state(meta: dict, arrays: dict[str, np.ndarray]) -> GenHopModel:
    config = GenHopConfig(**meta["config"])
    cfg1, cfg2 = config.hop_configs()
    cascade = CascadeModel(
        input_shape=tuple(meta["cascade"]["input_shape"]),
        cfg1=cfg1,
        cfg2=cfg2,
        hop1=_basis_from_arrays("cascade.hop1", arrays),
        hop1_rank=arrays["cascade.hop1_rank"],
        hop2=tuple(
            _basis_from_arrays(f"cascade.hop2.{j}", arrays)
            for j in range(meta["cascade"]["hop2_count"])
        ),
        channel_order=arrays["cascade.channel_order"],
    )

    seed_meta = meta["seed"]
    channels = tuple(
        ChannelPCA(
            mean=arrays[f"seed.pca.ch{j}.mean"],
            components=arrays[f"seed.pca.ch{j}.components"],
            eigenvalues=arrays[f"seed.pca.ch{j}.eigenvalues"],
        )
        for j in range(seed_meta["channel_count"])
    )
    pca = SpatialPCA(
        gamma=seed_meta["gamma"], grid_shape=tuple(seed_meta["grid_shape"]), channels=channels
    )
    densities = tuple(
        ClusterDensity(
            ica_mean=arrays[f"seed.c{j}.mean"],
            ica_unmixing=arrays[f"seed.c{j}.unmixing"],
            tables=tuple(
                CdfTable(values=arrays[f"seed.c{j}.t{i}.values"], levels=arrays[f"seed.c{j}.t{i}.levels"])
                for i in range(seed_meta["table_counts"][j])
            ),
        )
        for j in range(seed_meta["cluster_count"])
    )
    seed = SeedModel(
        pca=pca,
        clusters=ClusterModel(
            centroids=arrays["seed.centroids"], priors=arrays["seed.priors"], densities=densities
        ),
    )

    color = None
    if "color_books" in meta:
        color = ColorModel(
            mean=arrays["color.mean"],
            basis=arrays["color.basis"],
            eigenvalues=arrays["color.eigenvalues"],
            books=_grid_from_state("color", meta["color_books"], arrays),
        )
    return GenHopModel(
        config=config,
        cascade=cascade,
        seed=seed,
        s4_books=_grid_from_state("s4", meta["s4_books"], arrays),
        s1_books=_grid_from_state("s1", meta["s1_books"], arrays),
        color=color,
    )


def save(model: GenHopModel, path) -> None:
    """Write the model to a single versioned, checksummed file."""
    meta, arrays = model_to_state(model)
    model_io.save_state(path, meta, arrays)


def load(path) -> GenHopModel:
    """Read a model written by :func:`save`; every matrix round-trips bit-exactly."""
    meta, arrays = model_io.load_state(path)
    return model_from_state(meta, arrays)
