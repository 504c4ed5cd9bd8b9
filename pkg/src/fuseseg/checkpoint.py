"""Checkpoint format: a JSON manifest plus one concatenated tensor blob.

The manifest maps each entry name to its byte offset in tensors.bin;
every entry is written with the flat tensor serialization (rank and dims
as u64 LE, values as f64 LE). Writing is deterministic, so
save -> load -> save produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import DataFormatError
from .tensor import read_tensor, write_tensor

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "tensors.bin"


def save_checkpoint(out_dir: str | Path, tensors: dict[str, np.ndarray],
                    iteration: int, config: dict[str, Any],
                    optimizer_step: Optional[int] = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    with open(out_dir / BLOB_NAME, "wb") as blob:
        for name in sorted(tensors):
            entries[name] = {"offset": blob.tell(),
                             "shape": list(np.asarray(tensors[name]).shape)}
            write_tensor(blob, np.asarray(tensors[name]))
    manifest = {"iteration": iteration, "config": config, "entries": entries}
    if optimizer_step is not None:
        manifest["optimizer_step"] = optimizer_step
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8")
    return out_dir


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    """Returns {"iteration", "config", "tensors", "optimizer_step"}."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataFormatError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    tensors: dict[str, np.ndarray] = {}
    with open(path / BLOB_NAME, "rb") as blob:
        for name, entry in manifest["entries"].items():
            blob.seek(entry["offset"])
            tensor = read_tensor(blob)
            if list(tensor.shape) != entry["shape"]:
                raise DataFormatError(
                    f"checkpoint entry {name!r}: shape {tensor.shape} does not "
                    f"match manifest {entry['shape']}")
            tensors[name] = tensor
    return {
        "iteration": manifest["iteration"],
        "config": manifest["config"],
        "tensors": tensors,
        "optimizer_step": manifest.get("optimizer_step"),
    }
