"""COCO uncompressed run-length encoding (column-major, first run counts zeros)."""

import numpy as np

from errors import RleError
from models import RleMask


def rle_encode(binary_mask: np.ndarray) -> RleMask:
    mask = np.asarray(binary_mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise RleError(f"mask must be a non-empty 2D array, got shape {mask.shape}")
    flat = mask.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(size=(mask.shape[0], mask.shape[1]), counts=counts)


def rle_decode(rle: RleMask) -> np.ndarray:
    height, width = rle.size
    total = height * width
    counts = np.asarray(rle.counts, dtype=np.int64)
    if np.any(counts < 0):
        raise RleError("negative run length")
    if counts.sum() != total:
        raise RleError(f"run lengths sum to {int(counts.sum())}, mask has {total} pixels")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def rle_area(rle: RleMask) -> int:
    return int(sum(rle.counts[1::2]))
