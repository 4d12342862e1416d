"""Single-file binary container for trained models.

Layout: 8 magic bytes, uint32 format version, uint64 manifest length, a JSON
manifest (metadata plus the ordered section list), then each section as a
uint64 byte length followed by raw little-endian array bytes, and finally a
SHA-256 digest of everything before it.  All integers are little-endian;
matrices are IEEE-754 binary64, index vectors int64.  Loading verifies magic,
version, and checksum before touching any section, so a damaged file never
yields a partial model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ChecksumError, ModelFormatError, VersionError

MAGIC = b"GHMODEL\x00"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _wire_dtype(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "<f8"
    if arr.dtype.kind in "iu":
        return "<i8"
    raise TypeError(f"unsupported array dtype {arr.dtype}")


def save_state(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write metadata plus named arrays; sections are sorted by name."""
    names = sorted(arrays)
    sections = []
    payloads = []
    for name in names:
        wire = _wire_dtype(arrays[name])
        arr = np.ascontiguousarray(arrays[name], dtype=_DTYPES[wire])
        sections.append({"name": name, "dtype": wire, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())

    manifest = json.dumps(
        {"meta": meta, "sections": sections}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<Q", len(manifest))
    blob += manifest
    for payload in payloads:
        blob += struct.pack("<Q", len(payload))
        blob += payload
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


def load_state(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back into (meta, arrays); raises on any damage."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model container (bad magic)")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    if len(data) < len(MAGIC) + 12 + 32:
        raise ChecksumError(f"{path}: file truncated")
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise ChecksumError(f"{path}: checksum mismatch (file damaged or truncated)")

    offset = len(MAGIC) + 4
    (manifest_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    try:
        manifest = json.loads(data[offset : offset + manifest_len])
    except ValueError as exc:
        raise ModelFormatError(f"{path}: unreadable manifest") from exc
    offset += manifest_len

    arrays = {}
    for section in manifest["sections"]:
        dtype = _DTYPES.get(section["dtype"])
        if dtype is None:
            raise ModelFormatError(f"{path}: unknown section dtype {section['dtype']}")
        (nbytes,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        shape = tuple(section["shape"])
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise ModelFormatError(f"{path}: section {section['name']} has wrong length")
        arrays[section["name"]] = np.frombuffer(
            data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(data) - 32:
        raise ModelFormatError(f"{path}: trailing bytes after last section")
    return manifest["meta"], arrays
