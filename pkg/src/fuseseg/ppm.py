"""NetPBM image I/O: P6 (RGB) for dataset images, P5 (gray) for masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataFormatError


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write floats in [0,1] of shape (H,W,3) as an 8-bit binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataFormatError(f"expected (H,W,3) image, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise DataFormatError("image values must lie in [0,1]")
    h, w, _ = image.shape
    payload = np.rint(image * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + payload)


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, fields, offset = _parse_header(raw, path)
    if magic != b"P6":
        raise DataFormatError(f"{path}: expected P6 magic, got {magic!r}")
    w, h, maxval = fields
    if maxval != 255:
        raise DataFormatError(f"{path}: only maxval 255 is supported")
    expected = w * h * 3
    payload = raw[offset:offset + expected]
    if len(payload) != expected:
        raise DataFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return pixels.astype(np.float64) / 255.0


def write_pgm(path: str | Path, mask: np.ndarray) -> None:
    """Write a binary mask as an 8-bit PGM with values 0/255."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataFormatError(f"expected (H,W) mask, got {mask.shape}")
    h, w = mask.shape
    payload = np.where(mask.astype(bool), 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + payload)


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, fields, offset = _parse_header(raw, path)
    if magic != b"P5":
        raise DataFormatError(f"{path}: expected P5 magic, got {magic!r}")
    w, h, maxval = fields
    payload = raw[offset:offset + w * h]
    if len(payload) != w * h:
        raise DataFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w) > (maxval // 2)


def _parse_header(raw: bytes, path) -> tuple[bytes, tuple[int, int, int], int]:
    """Header = magic then three whitespace-separated ints; '#' starts a
    comment to end of line. Returns (magic, (w,h,maxval), payload offset)."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(raw):
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            start = i
            while i < len(raw) and not raw[i:i + 1].isspace():
                i += 1
            tokens.append(raw[start:i])
    if len(tokens) < 4:
        raise DataFormatError(f"{path}: incomplete NetPBM header")
    i += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DataFormatError(f"{path}: malformed NetPBM header") from None
    return tokens[0], (w, h, maxval), i
