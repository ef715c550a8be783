"""Reader and writer for the IDX binary format (MNIST distribution files).

Layout: two zero bytes, a type byte (0x08 = unsigned byte), a byte giving
the number of dimensions, then one big-endian uint32 per dimension and the
raw payload.  Image files use magic 0x00000803, label files 0x00000801.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Optional

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxFormatError(f"{path}: bad magic number 0x{magic:08x}")
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < size:
        raise IdxFormatError(f"{path}: truncated payload, header declares {size} bytes "
                             f"but {len(raw) - header} are present")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def center_crop(images: np.ndarray, input_dim: int) -> np.ndarray:
    """Flatten (N, H, W) images, keeping a centered square of ``input_dim`` pixels."""
    count, height, width = images.shape
    if input_dim == height * width:
        return images.reshape(count, -1)
    side = int(round(np.sqrt(input_dim)))
    if side * side != input_dim or side > min(height, width):
        raise IdxFormatError(f"cannot crop {height}x{width} images to {input_dim} inputs")
    top, left = (height - side) // 2, (width - side) // 2
    return images[:, top:top + side, left:left + side].reshape(count, -1)


def companion_labels_path(images_path: Path) -> Optional[Path]:
    name = images_path.name
    for a, b in (("images-idx3", "labels-idx1"), ("images", "labels")):
        if a in name:
            candidate = images_path.with_name(name.replace(a, b))
            if candidate.exists():
                return candidate
    return None
