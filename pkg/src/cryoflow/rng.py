"""Deterministic named random streams.

All randomness in the pipeline derives from a single root seed plus a
stream name (and optionally a step index), so any stage can be replayed
bit-identically without serializing generator state.
"""

import hashlib

import numpy as np


def _stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str, step: int | None = None) -> np.random.Generator:
    """Generator for the (seed, name[, step]) substream."""
    entropy = [int(seed), _stream_key(name)]
    if step is not None:
        entropy.append(int(step))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
