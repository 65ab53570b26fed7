"""Counter-based random streams.

Every stochastic step in the toolkit draws from a Philox generator keyed by
a label tuple (e.g. ``("proj", seed, projection_id)``).  Streams for distinct
entities are independent, so sampling order and any parallel scheduling never
change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(*parts) -> int:
    """Derive a 128-bit Philox key from an arbitrary label tuple."""
    label = "\x1f".join(repr(p) for p in parts).encode()
    digest = hashlib.blake2b(label, digest_size=16).digest()
    return int.from_bytes(digest, "little")


def stream(*parts) -> np.random.Generator:
    """Independent generator for the entity identified by ``parts``."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
