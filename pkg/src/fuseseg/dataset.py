"""On-disk dataset format: a JSON-lines index plus P6 PPM images.

Each index line is an object with fields {"id", "image", "expression",
"mask_rle": {"size": [H, W], "counts": [...]}}; the image path is
relative to the index file. Masks are stored inline as column-major RLE.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .errors import DataFormatError
from .ppm import read_ppm, write_ppm
from .rle import rle_decode, rle_encode
from .synth import SegSample

INDEX_NAME = "index.jsonl"


def save_dataset(samples: Sequence[SegSample], out_dir: str | Path) -> Path:
    """Write the index and images under `out_dir`; returns the index path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for sample in samples:
        rel = f"images/{sample.sample_id}.ppm"
        write_ppm(out_dir / rel, sample.image)
        h, w = sample.mask.shape
        record = {
            "id": sample.sample_id,
            "image": rel,
            "expression": sample.expression,
            "mask_rle": {"size": [h, w], "counts": rle_encode(sample.mask)},
        }
        lines.append(json.dumps(record, sort_keys=True))
    index = out_dir / INDEX_NAME
    index.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return index


def load_dataset(path: str | Path) -> list[SegSample]:
    """Load and validate a dataset; `path` is the index file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / INDEX_NAME
    if not path.is_file():
        raise DataFormatError(f"dataset index not found: {path}")
    root = path.parent
    samples: list[SegSample] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        samples.append(_parse_line(line, lineno, root))
    return samples


def _parse_line(line: str, lineno: int, root: Path) -> SegSample:
    def fail(reason: str):
        raise DataFormatError(f"{root / INDEX_NAME}:{lineno}: {reason}")

    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        fail(f"invalid JSON ({e.msg})")
    if not isinstance(record, dict):
        fail("record must be a JSON object")
    for field_name in ("id", "image", "expression", "mask_rle"):
        if field_name not in record:
            fail(f"missing field {field_name!r}")
    rle = record["mask_rle"]
    if not isinstance(rle, dict) or "size" not in rle or "counts" not in rle:
        fail("mask_rle must carry 'size' and 'counts'")
    size = rle["size"]
    if (not isinstance(size, list) or len(size) != 2
            or not all(isinstance(v, int) and v > 0 for v in size)):
        fail("mask_rle.size must be [H, W] of positive ints")
    counts = rle["counts"]
    if not isinstance(counts, list) or not all(isinstance(c, int) for c in counts):
        fail("mask_rle.counts must be a list of ints")
    try:
        mask = rle_decode(counts, (size[0], size[1]))
    except DataFormatError as e:
        fail(str(e))
    image_path = root / record["image"]
    if not image_path.is_file():
        fail(f"image file not found: {record['image']}")
    try:
        image = read_ppm(image_path)
    except DataFormatError as e:
        fail(str(e))
    if image.shape[:2] != mask.shape:
        fail(f"image {image.shape[:2]} and mask {mask.shape} sizes disagree")
    if not isinstance(record["expression"], str):
        fail("expression must be a string")
    return SegSample(image=image, expression=record["expression"], mask=mask,
                     sample_id=str(record["id"]))
