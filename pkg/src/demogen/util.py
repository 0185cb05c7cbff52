"""Shared helpers: canonical JSON serialization, atomic writes, stable hashing.

All floats written to disk pass through :func:`canonical_float` (9 significant
digits) so that emit -> parse -> emit round trips are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import IoFailure


def format_float(x: float) -> str:
    """Render a float with 9 significant digits; -0.0 collapses to 0."""
    if x == 0.0:
        return "0"
    return format(float(x), ".9g")


def canonical_float(x: float) -> float:
    """The float a 9-significant-digit rendering parses back to.

    Applying this twice is a no-op, which is what makes re-emitted files
    byte-identical.
    """
    return float(format_float(x))


def canonicalize(obj):
    """Recursively replace floats with their canonical 9-digit values.

    Numpy scalars and arrays are lowered to plain Python types on the way.
    """
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        return canonical_float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, dict):
        return {k: canonicalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [canonicalize(v) for v in obj]
    return obj


def dumps_canonical(obj, indent: int | None = None) -> str:
    """Deterministic JSON text: canonical floats, fixed key order (insertion)."""
    if indent is None:
        return json.dumps(canonicalize(obj), separators=(",", ":"))
    return json.dumps(canonicalize(obj), indent=indent)


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"write failed for {path}: {exc}") from exc


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_hex(data: bytes, length: int = 16) -> str:
    return hashlib.sha256(data).hexdigest()[:length]


def stable_hash(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary parts (never Python's hash())."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
