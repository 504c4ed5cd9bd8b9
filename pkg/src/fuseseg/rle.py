"""Uncompressed run-length coding for binary masks.

Masks are scanned in column-major order and coded as alternating run
lengths, starting with the count of zeros (possibly 0). The counts always
sum to H*W.
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError


def rle_encode(mask: np.ndarray) -> list[int]:
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise DataFormatError("rle_encode expects a binary mask")
    flat = mask.astype(np.uint8).ravel(order="F")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat)) + 1
    boundaries = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(boundaries).tolist()
    if flat[0] == 1:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(counts: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(np.prod(shape))
    if sum(counts) != total:
        raise DataFormatError(
            f"rle counts sum to {sum(counts)}, expected {total} for shape {shape}")
    if any(c < 0 for c in counts):
        raise DataFormatError("rle counts must be non-negative")
    flat = np.zeros(total, dtype=bool)
    position = 0
    value = False
    for count in counts:
        if value:
            flat[position:position + count] = True
        position += count
        value = not value
    return flat.reshape(shape, order="F")
