"""Shared file-writing and fingerprinting helpers.

All artifact files are written atomically (temp file + rename) and floats are
serialized with round-trip precision so that a rerun with the same inputs
produces byte-identical outputs.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt_float(x: float) -> str:
    """Serialize a float with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text to `path` via a temp file in the same directory + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str | Path, obj) -> None:
    """Atomically write `obj` as deterministic JSON (sorted keys, newline-terminated)."""
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def array_fingerprint(*arrays: np.ndarray) -> str:
    """Content hash of one or more arrays (dtype/shape/bytes), for cache keying."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
