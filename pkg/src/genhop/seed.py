"""Seed-space density model and white-noise sampler.

Training learns the distribution of the lowest-dimensional subspace samples in
four steps: per-channel spatial PCA (keeping only components whose normalized
eigenvalue clears a threshold), k-means clustering, per-cluster ICA, and
cumulative histogram matching of each independent component against N(0, 1).
Sampling inverts the chain: pick a cluster by prior, draw unit Gaussians, map
them through the inverse histogram match, mix back through the inverse ICA,
and expand through the inverse spatial PCA.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateDataError, DimensionMismatchError, InsufficientSamplesError

logger = logging.getLogger(__name__)

_EIG_FLOOR = 1e-12  # relative floor when inverting covariance spectra
_MAX_UNMIXING_COND = 1e8


def _fix_signs(components: np.ndarray) -> np.ndarray:
    lead = np.take_along_axis(
        components, np.argmax(np.abs(components), axis=1)[:, None], axis=1
    )[:, 0]
    return components * np.where(lead < 0.0, -1.0, 1.0)[:, None]


# ---------------------------------------------------------------------------
# spatial PCA


@dataclass(frozen=True)
class ChannelPCA:
    mean: np.ndarray  # (positions,)
    components: np.ndarray  # (retained, positions), orthonormal rows
    eigenvalues: np.ndarray  # (retained,), descending

    @property
    def retained(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class SpatialPCA:
    """Per-channel PCA over the flattened spatial grid of seed-space tensors."""

    gamma: float
    grid_shape: tuple[int, int, int]  # (h, w, channels) of the tensors it was fit on
    channels: tuple[ChannelPCA, ...]

    @property
    def dim(self) -> int:
        """Total retained dimension across channels."""
        return sum(ch.retained for ch in self.channels)


def fit_spatial_pca(samples: np.ndarray, gamma: float) -> SpatialPCA:
    """Fit per-channel spatial PCA on an (n, h, w, c) stack.

    Eigenvalues are normalized to sum 1 within each channel before comparing
    against ``gamma``; components below the threshold are discarded.  Scores
    stay at natural scale (decorrelated, not variance-normalized).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4:
        raise DimensionMismatchError(f"expected (n, h, w, c) stack, got shape {samples.shape}")
    if samples.shape[0] < 2:
        raise InsufficientSamplesError("spatial PCA needs at least 2 samples")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")

    n, h, w, c = samples.shape
    flat = samples.reshape(n, h * w, c)
    channels = []
    for ch in range(c):
        x = flat[:, :, ch]
        mean = x.mean(axis=0)
        xc = x - mean
        cov = xc.T @ xc / (n - 1)
        eigval, eigvec = np.linalg.eigh(cov)
        order = np.argsort(eigval, kind="stable")[::-1]
        eigval = np.clip(eigval[order], 0.0, None)
        total = float(eigval.sum())
        keep = int(np.sum(eigval / total >= gamma)) if total > 0.0 else 0
        channels.append(
            ChannelPCA(
                mean=mean,
                components=_fix_signs(eigvec[:, order[:keep]].T),
                eigenvalues=eigval[:keep],
            )
        )

    pca = SpatialPCA(gamma=gamma, grid_shape=(h, w, c), channels=tuple(channels))
    if pca.dim == 0:
        raise DegenerateDataError(
            "no spatial component cleared the eigenvalue threshold in any channel"
        )
    return pca


def project_all(pca: SpatialPCA, samples: np.ndarray) -> np.ndarray:
    """(n, h, w, c) stack -> (n, dim) matrix of retained scores."""
    n = samples.shape[0]
    h, w, c = pca.grid_shape
    if samples.shape[1:] != (h, w, c):
        raise DimensionMismatchError(
            f"expected tensors of shape {pca.grid_shape}, got {samples.shape[1:]}"
        )
    flat = samples.reshape(n, h * w, c)
    return np.concatenate(
        [(flat[:, :, i] - ch.mean) @ ch.components.T for i, ch in enumerate(pca.channels)],
        axis=1,
    )


def unproject_all(pca: SpatialPCA, vectors: np.ndarray) -> np.ndarray:
    """(n, dim) matrix -> (n, h, w, c) rank-limited reconstructions."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != pca.dim:
        raise DimensionMismatchError(f"expected (n, {pca.dim}) matrix, got {vectors.shape}")
    h, w, c = pca.grid_shape
    out = np.empty((vectors.shape[0], h * w, c))
    offset = 0
    for i, ch in enumerate(pca.channels):
        scores = vectors[:, offset : offset + ch.retained]
        out[:, :, i] = scores @ ch.components + ch.mean
        offset += ch.retained
    return out.reshape(vectors.shape[0], h, w, c)


def project(pca: SpatialPCA, t: np.ndarray) -> np.ndarray:
    return project_all(pca, t[None])[0]


def unproject(pca: SpatialPCA, v: np.ndarray) -> np.ndarray:
    return unproject_all(pca, np.asarray(v)[None])[0]


# ---------------------------------------------------------------------------
# k-means


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:  # all remaining points coincide with a centroid
            centroids[j] = x[rng.integers(n)]
            continue
        centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x, centroids, max_iter):
    n = x.shape[0]
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        row_d2 = d2[np.arange(n), new_labels]
        # empty cluster: re-seed at the point currently farthest from its centroid
        for j in np.flatnonzero(np.bincount(new_labels, minlength=len(centroids)) == 0):
            far = int(np.argmax(row_d2))
            centroids[j] = x[far]
            new_labels[far] = j
            row_d2[far] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(len(centroids)):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    inertia = float(row_d2.sum())
    return centroids, labels, inertia


def kmeans(
    x: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 10, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean k-means with k-means++ seeding; best of ``n_init`` restarts."""
    best = None
    for _ in range(n_init):
        centroids, labels, inertia = _lloyd(x, _kmeans_pp_init(x, k, rng), max_iter)
        if best is None or inertia < best[2]:
            best = (centroids, labels, inertia)
    return best[0], best[1]


# ---------------------------------------------------------------------------
# ICA


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, _EIG_FLOOR * s.max() if s.max() > 0 else _EIG_FLOOR, None)
    return (u / np.sqrt(s)) @ u.T @ w


def _whitening_matrix(xc: np.ndarray) -> np.ndarray:
    """Full-rank whitening of centered rows: cov(xc @ K.T) = I."""
    cov = xc.T @ xc / xc.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    floor = max(eigval.max(), 0.0) * _EIG_FLOOR
    eigval = np.clip(eigval, max(floor, 1e-300), None)
    return (eigvec / np.sqrt(eigval)).T


def fast_ica(
    xc: np.ndarray,
    rng: np.random.Generator,
    tol: float = 1e-4,
    max_iter: int = 500,
) -> tuple[np.ndarray, bool]:
    """Fixed-point ICA (log-cosh contrast, symmetric decorrelation) on centered rows.

    Returns ``(unmixing, converged)`` with components = xc @ unmixing.T; on
    whitened data the rotation is orthonormal, so components come out with
    unit variance.
    """
    n, d = xc.shape
    k = _whitening_matrix(xc)
    xw = xc @ k.T
    w = _sym_decorrelate(rng.standard_normal((d, d)))
    converged = False
    for _ in range(max_iter):
        s = xw @ w.T
        g = np.tanh(s)
        g_prime = (1.0 - g * g).mean(axis=0)
        w_new = _sym_decorrelate(g.T @ xw / n - g_prime[:, None] * w)
        shift = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if shift < tol:
            converged = True
            break
    return w @ k, converged


# ---------------------------------------------------------------------------
# cumulative histogram matching


@dataclass(frozen=True)
class CdfTable:
    """Empirical CDF of one component: strictly increasing values with levels.

    Levels are plotting positions (i - 0.5)/n, averaged over ties, so both
    endpoints stay strictly inside (0, 1) and the Gaussian map stays finite.
    """

    values: np.ndarray
    levels: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "CdfTable":
        samples = np.sort(np.asarray(samples, dtype=np.float64))
        n = samples.shape[0]
        if n == 0:
            raise InsufficientSamplesError("cannot build a CDF table from zero samples")
        positions = (np.arange(n) + 0.5) / n
        values, start, counts = np.unique(samples, return_index=True, return_counts=True)
        levels = positions[start] + (counts - 1) / (2.0 * n)  # mean position of each tie group
        return cls(values=values, levels=levels)


def gaussianize(v, table: CdfTable):
    """Map sample-distribution values to N(0, 1) via the empirical CDF."""
    return ndtri(np.interp(v, table.values, table.levels))


def degaussianize(g, table: CdfTable):
    """Monotone inverse of :func:`gaussianize`; tails clamp to the extreme levels."""
    return np.interp(ndtr(g), table.levels, table.values)


# ---------------------------------------------------------------------------
# cluster density model


@dataclass(frozen=True)
class ClusterDensity:
    """One cluster's ICA frame and per-component CDF tables."""

    ica_mean: np.ndarray  # (dim,)
    ica_unmixing: np.ndarray  # (dim, dim), invertible
    tables: tuple[CdfTable, ...]

    def analyze(self, vectors: np.ndarray) -> np.ndarray:
        comps = (vectors - self.ica_mean) @ self.ica_unmixing.T
        return np.stack(
            [gaussianize(comps[:, j], t) for j, t in enumerate(self.tables)], axis=1
        )

    def synthesize(self, gaussians: np.ndarray) -> np.ndarray:
        comps = np.stack(
            [degaussianize(gaussians[:, j], t) for j, t in enumerate(self.tables)], axis=1
        )
        return comps @ np.linalg.inv(self.ica_unmixing).T + self.ica_mean


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # (k, dim)
    priors: np.ndarray  # (k,), positive, sums to 1
    densities: tuple[ClusterDensity, ...]


def fit_clusters(
    vectors: np.ndarray, k: int, rng_seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cluster (M, dim) vectors; returns (centroids, priors, labels)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    m = vectors.shape[0]
    if not 1 <= k <= m:
        raise InsufficientSamplesError(f"need at least k={k} samples, got {m}")
    centroids, labels = kmeans(vectors, k, np.random.default_rng(rng_seed))
    priors = np.bincount(labels, minlength=k) / m
    return centroids, priors, labels


def fit_cluster_density(members: np.ndarray, rng: np.random.Generator) -> ClusterDensity:
    """Fit ICA + CDF tables on one cluster's member vectors.

    Clusters smaller than dim + 1 fall back to identity unmixing (histogram
    matching still applies per raw coordinate); non-convergent ICA falls back
    to the PCA-whitening rotation alone.
    """
    members = np.asarray(members, dtype=np.float64)
    m, dim = members.shape
    mean = members.mean(axis=0)
    xc = members - mean

    if m < dim + 1:
        unmixing = np.eye(dim)
    else:
        unmixing, converged = fast_ica(xc, rng)
        if not converged:
            logger.warning(
                "ICA did not converge on a cluster of %d members; "
                "falling back to whitening-only unmixing",
                m,
            )
            unmixing = _whitening_matrix(xc)
        if np.linalg.cond(unmixing) >= _MAX_UNMIXING_COND:
            logger.warning("ill-conditioned unmixing matrix; falling back to identity")
            unmixing = np.eye(dim)

    comps = xc @ unmixing.T
    tables = tuple(CdfTable.from_samples(comps[:, j]) for j in range(dim))
    return ClusterDensity(ica_mean=mean, ica_unmixing=unmixing, tables=tables)


@dataclass(frozen=True)
class SeedModel:
    """Everything needed to draw new seed-space tensors from white noise."""

    pca: SpatialPCA
    clusters: ClusterModel

    @property
    def dim(self) -> int:
        return self.pca.dim


def fit_seed_model(samples: np.ndarray, gamma: float, k: int, rng_seed: int) -> SeedModel:
    """Run all four training steps on an (n, h, w, c) seed-space stack."""
    pca = fit_spatial_pca(samples, gamma)
    vectors = project_all(pca, samples)
    centroids, priors, labels = fit_clusters(vectors, k, rng_seed)
    densities = tuple(
        fit_cluster_density(
            vectors[labels == j], np.random.default_rng(np.random.SeedSequence([rng_seed, j]))
        )
        for j in range(k)
    )
    return SeedModel(
        pca=pca,
        clusters=ClusterModel(centroids=centroids, priors=priors, densities=densities),
    )


def draw_cluster(model: SeedModel, rng: np.random.Generator) -> int:
    """Pick a cluster index with probability equal to its prior."""
    return int(rng.choice(len(model.clusters.priors), p=model.clusters.priors))


def sample_seed(model: SeedModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one seed-space tensor: cluster by prior, then inverted chain."""
    density = model.clusters.densities[draw_cluster(model, rng)]
    g = rng.standard_normal(model.dim)
    return unproject(model.pca, density.synthesize(g[None])[0])
