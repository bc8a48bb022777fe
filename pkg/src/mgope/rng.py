"""Deterministic, addressable random streams.

All randomness in the toolkit flows through counter-based Philox generators
keyed by ``(seed, path...)``.  A stream's output depends only on its key, so
work units (trajectory blocks, trials, optimizer restarts) can be computed in
any order, on any number of workers, and still reproduce bit-identical
results.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "path_key"]

_MASK64 = (1 << 64) - 1


def path_key(*path) -> int:
    """Hash a hierarchical path (ints / strings) to a stable 64-bit key.

    Uses blake2b, so the mapping is identical across platforms and Python
    processes (unlike built-in ``hash``).
    """
    h = hashlib.blake2b(digest_size=8)
    for part in path:
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        elif isinstance(part, bytes):
            h.update(b"b" + part + b"\x00")
        else:
            raise TypeError(f"unsupported path component {part!r}")
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *path) -> np.random.Generator:
    """Return the Philox stream addressed by ``(seed, *path)``."""
    key = np.array([int(seed) & _MASK64, path_key(*path)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
