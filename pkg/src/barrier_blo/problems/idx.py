"""Reader for the big-endian IDX format used by MNIST."""

from __future__ import annotations

import numpy as np

from ..errors import IdxFormatError
from .dhc import Dataset

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read(path, magic, ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    shape = tuple(int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    size = int(np.prod(shape))
    if len(raw) < header + size:
        raise IdxFormatError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(shape)


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Load an image/label IDX pair as flattened features scaled to ``[0, 1]``."""
    if limit is not None and limit < 0:
        raise ValueError(f"limit must be >= 0, got {limit}")
    images = _read(images_path, IMAGE_MAGIC, 3)
    labels = _read(labels_path, LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    count = len(labels) if limit is None else min(int(limit), len(labels))
    feats = images[:count].reshape(count, int(np.prod(images.shape[1:]))).astype(float) / 255.0
    return Dataset(feats, labels[:count].astype(np.int64), np.zeros(count, dtype=bool))
