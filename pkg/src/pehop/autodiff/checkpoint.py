"""Weight checkpoints: a JSON manifest of ``{name, shape, offset}`` entries and
a flat little-endian float32 payload next to it."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import HeaderMismatch, MissingFile

_LE_F32 = np.dtype("<f4")


def save_checkpoint(state: dict, path, extra: dict | None = None) -> None:
    """``path`` is the manifest file; the payload goes to ``path`` with ``.bin``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype=_LE_F32)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {"dtype": "f32", "byte_order": "little-endian", "tensors": entries}
    if extra:
        manifest["meta"] = extra
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    path.with_suffix(".bin").write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(state, meta)``; offsets count float32 elements, not bytes."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    for p in (path, bin_path):
        if not p.exists():
            raise MissingFile(str(p))
    manifest = json.loads(path.read_text())
    flat = np.frombuffer(bin_path.read_bytes(), dtype=_LE_F32)
    state = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + n > flat.size:
            raise HeaderMismatch(f"{e['name']} overruns the payload")
        state[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return state, manifest.get("meta", {})
