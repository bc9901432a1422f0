"""Seeding policy: one counter-based generator, namespaced streams.

Every random draw in the project goes through a ``numpy`` Philox generator
keyed by ``(seed, stream)``.  Philox is counter-based, so streams with
distinct keys are independent and the mapping from key to output is stable
across platforms and numpy releases within the same major RNG scheme.

``derive_seed`` turns a base seed plus an arbitrary label path (for example
``("trial", 3, "dataset")``) into a fresh 63-bit seed via SHA-256, so the
harness can hand disjoint, reproducible streams to every component without
coordinating integer offsets.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the Philox generator for the given seed and stream id."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *labels) -> int:
    """Hash ``seed`` and a label path into an independent 63-bit seed."""
    blob = ":".join(["pal", str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(blob.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
