"""Dataset ingestion (IDX files, image directories) and PNG emission."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import GenHopError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class DatasetError(GenHopError):
    """Dataset file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class DatasetSource:
    """Where training images come from and what shape they must have."""

    kind: str  # "idx-gzip" or "image-directory"
    path: Path
    height: int
    width: int
    channels: int


def _read_idx(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":  # gzip container
        raw = gzip.decompress(raw)
    return raw


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file (optionally gzipped) into (n, rows, cols) uint8."""
    path = Path(path)
    raw = _read_idx(path)
    if len(raw) < 16:
        raise DatasetError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw)
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(f"{path}: bad IDX image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols).copy()


def load_idx_labels(path) -> np.ndarray:
    path = Path(path)
    raw = _read_idx(path)
    if len(raw) < 8:
        raise DatasetError(f"{path}: truncated IDX header")
    magic, count = struct.unpack_from(">II", raw)
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) != 8 + count:
        raise DatasetError(f"{path}: expected {8 + count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (n, rows, cols) uint8 images as an IDX file; gzip when path ends .gz."""
    path = Path(path)
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    if path.suffix == ".gz":
        path.write_bytes(gzip.compress(payload, mtime=0))
    else:
        path.write_bytes(payload)


def find_idx_images(directory: Path) -> Path | None:
    """Locate a training-image IDX file under a dataset directory."""
    for pattern in ("*images*idx3*", "*images*.idx3-ubyte*", "*idx3-ubyte*"):
        matches = sorted(directory.glob(pattern))
        if matches:
            return matches[0]
    return None


def _load_one_image(path: Path, src: DatasetSource) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("L" if src.channels == 1 else "RGB")
        if img.size != (src.width, src.height):
            # center-crop to the target aspect, then bilinear resize
            scale = max(src.width / img.width, src.height / img.height)
            box_w, box_h = src.width / scale, src.height / scale
            left = (img.width - box_w) / 2
            top = (img.height - box_h) / 2
            img = img.resize(
                (src.width, src.height),
                Image.Resampling.BILINEAR,
                box=(left, top, left + box_w, top + box_h),
            )
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr[:, :, None] if arr.ndim == 2 else arr


def load_dataset(src: DatasetSource) -> np.ndarray:
    """Load a dataset into an (n, h, w, c) float64 stack scaled to [0, 1]."""
    path = Path(src.path)
    if src.kind == "idx-gzip":
        idx_path = path
        if path.is_dir():
            found = find_idx_images(path)
            if found is None:
                raise DatasetError(f"{path}: no IDX image file found")
            idx_path = found
        images = load_idx_images(idx_path)
        if images.shape[1:] != (src.height, src.width) or src.channels != 1:
            raise DatasetError(
                f"{idx_path}: contains {images.shape[1]}x{images.shape[2]} grayscale images, "
                f"expected {src.height}x{src.width}x{src.channels}"
            )
        return images.astype(np.float64)[:, :, :, None] / 255.0
    if src.kind == "image-directory":
        if not path.is_dir():
            raise DatasetError(f"{path}: not a directory")
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"{path}: no PNG/JPEG files found")
        return np.stack([_load_one_image(p, src) for p in files])
    raise DatasetError(f"unknown dataset kind {src.kind!r}")


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def save_png(path, image: np.ndarray) -> None:
    """Write one (h, w, 1|3) float image in [0, 1] as an 8-bit PNG."""
    arr = to_uint8(image)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def save_grid_png(path, images: np.ndarray, pad: int = 2) -> None:
    """Tile (n, h, w, c) images into one montage PNG, raster order."""
    n, h, w, c = images.shape
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    canvas = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad, c))
    for i in range(n):
        r, col = divmod(i, cols)
        canvas[r * (h + pad) : r * (h + pad) + h, col * (w + pad) : col * (w + pad) + w] = images[i]
    save_png(path, canvas)
