"""JSON manifest of named tensors.

Floats are written with ``repr`` precision, which round-trips float64
exactly through :func:`json.loads`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "volcast-tensors"
VERSION = 1


def to_manifest(tensors: dict) -> dict:
    out = {}
    for name, t in tensors.items():
        arr = np.asarray(getattr(t, "data", t), dtype=np.float64)
        out[name] = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
    return {"format": FORMAT, "version": VERSION, "tensors": out}


def from_manifest(doc: dict) -> dict[str, np.ndarray]:
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a tensor manifest: format={doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
    out = {}
    for name, entry in doc["tensors"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"tensor {name!r}: {values.size} values for shape {shape}")
        out[name] = values.reshape(shape)
    return out


def save(tensors: dict, path: str | Path, extra: dict | None = None) -> None:
    doc = to_manifest(tensors)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    return from_manifest(doc), doc
