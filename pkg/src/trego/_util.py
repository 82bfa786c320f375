"""Small shared helpers: stable seed derivation and deterministic formatting."""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def stable_seed(*parts) -> int:
    """Derive a 63-bit seed from the given parts, stable across runs and platforms.

    Python's built-in ``hash`` is salted per process, so seeds routed through it
    would not be reproducible; this uses SHA-256 over a canonical string instead.
    """
    key = _SEP.join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal representation of a float (stable bytes)."""
    return repr(float(x))


def as_float_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr
