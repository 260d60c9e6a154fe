"""Deterministic named random streams.

Every source of randomness in a run is derived from (root seed, stream name,
index) so that reruns and checkpoint resumes reproduce draws exactly without
having to serialize generator state.
"""

import hashlib

import numpy as np


def _stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the stream `name` (optionally indexed) under `root_seed`."""
    entropy = [int(root_seed), _stream_key(name), *[int(i) for i in indices]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
