"""Shared handwritten-digit training data for the test suite.

Uses real MNIST IDX files when GENHOP_MNIST_DIR points at them.  Otherwise
falls back to a deterministic 28x28 stand-in built from the bundled
scikit-learn handwritten-digit scans (real pen strokes, same polarity and
value range as MNIST): each 8x8 scan is bilinearly upsampled, and extra
samples beyond the 1797 originals are small deterministic shifts.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image


def _mnist_idx_file() -> Path | None:
    root = os.environ.get("GENHOP_MNIST_DIR")
    if not root:
        return None
    from genhop.datasets import find_idx_images

    return find_idx_images(Path(root))


def using_real_mnist() -> bool:
    return _mnist_idx_file() is not None


def _upsample(img8: np.ndarray) -> np.ndarray:
    pil = Image.fromarray((img8 / 16.0).astype(np.float32), mode="F")
    return np.asarray(pil.resize((28, 28), Image.Resampling.BILINEAR), dtype=np.float64)


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    padded = np.pad(img, 2)
    return padded[2 - dy : 30 - dy, 2 - dx : 30 - dx]


def load_digits_28(n: int, seed: int = 0) -> np.ndarray:
    """(n, 28, 28, 1) float64 digit images in [0, 1], deterministic in (n, seed)."""
    idx = _mnist_idx_file()
    if idx is not None:
        from genhop.datasets import load_idx_images

        images = load_idx_images(idx)
        if len(images) < n:
            raise RuntimeError(f"GENHOP_MNIST_DIR holds only {len(images)} images, need {n}")
        return images[:n].astype(np.float64)[:, :, :, None] / 255.0

    from sklearn.datasets import load_digits

    scans = load_digits().images  # (1797, 8, 8), strokes high like MNIST
    base = np.stack([_upsample(img) for img in scans])
    rng = np.random.default_rng(seed)
    out = np.empty((n, 28, 28))
    for i in range(n):
        img = base[i % len(base)]
        if i >= len(base):
            dy, dx = rng.integers(-2, 3, size=2)
            img = _shift(img, int(dy), int(dx))
        out[i] = img
    return np.clip(out, 0.0, 1.0)[:, :, :, None]
