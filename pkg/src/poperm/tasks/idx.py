"""Reader and writer for the big-endian IDX tensor format used by MNIST."""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

UBYTE = 0x08
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
}


class IdxFormatError(ValueError):
    pass


def parse_idx(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError("file too short for an IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or ndim == 0:
        raise IdxFormatError(f"bad IDX magic 0x{int.from_bytes(data[:4], 'big'):08x}")
    if dtype != UBYTE:
        raise IdxFormatError(f"unsupported IDX element type 0x{dtype:02x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) - header < size:
        raise IdxFormatError(f"truncated payload: expected {size} bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims).copy()


def read_idx(path) -> np.ndarray:
    """Raw ``uint8`` contents of an IDX file."""
    with open(path, "rb") as fh:
        return parse_idx(fh.read())


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise IdxFormatError("only uint8 tensors can be written")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, UBYTE, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def standardise(images: np.ndarray, mean=None, std=None):
    """Scale pixels to [0, 1], then to zero mean / unit std over the whole stack."""
    x = images.astype(np.float64) / 255.0
    mean = x.mean() if mean is None else mean
    std = x.std() if std is None else std
    return (x - mean) / std, float(mean), float(std)


def load_idx(path) -> np.ndarray:
    """Image stack from an IDX file, standardised over the file.

    Label files (magic 0x00000801) are returned as raw integers.
    """
    raw = read_idx(path)
    if raw.ndim == 1:
        return raw.astype(np.int64)
    return standardise(raw)[0]


def find_mnist(data_dir=None) -> dict:
    """Paths to the MNIST image files under ``data_dir`` or ``$POPERM_DATA_DIR``."""
    root = data_dir or os.environ.get("POPERM_DATA_DIR")
    found = {}
    if not root:
        return found
    for split, names in MNIST_FILES.items():
        for name in names:
            path = Path(root) / name
            if path.is_file():
                found[split] = path
                break
    return found
