"""Deterministic, named random substreams.

Every stochastic decision in the package draws from a counter-based Philox
generator keyed by (root seed, hashed stream labels). Streams with different
labels are statistically independent, and any single decision can be pinned
in tests by reconstructing its stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(labels: tuple) -> int:
    digest = hashlib.blake2b(
        "/".join(str(x) for x in labels).encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for the named substream of ``seed``.

    ``labels`` may mix strings and integers (e.g. ``substream(seed, "center",
    crystal_index)``); the same labels always produce the same stream.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(_label_key(labels))], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
