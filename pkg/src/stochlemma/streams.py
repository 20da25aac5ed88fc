"""Named random sub-streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np

DATA = "data"
INIT = "init"
DISTURBANCE = "disturbance"
GERMS = "germs"
FEEDBACK = "feedback"
SYNTHESIS = "synthesis"


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, index...)``.

    The name is hashed with CRC-32 so the mapping is stable across runs and
    Python versions.
    """
    key = [int(seed), zlib.crc32(name.encode())] + [int(i) for i in index]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def substream_seed(seed: int, name: str, *index: int) -> int:
    """Integer seed for APIs that take a seed rather than a generator."""
    return int(stream(seed, name, *index).integers(0, 2**63 - 1))
