"""Deterministic random-stream derivation.

Every stochastic consumer in the library (anchor initialisation, window
sampling, decoder init, synthetic data) pulls its generator from
:func:`stream`, so a single master seed plus a purpose name fully determines
the stream. Purpose names are hashed into the seed material; two streams with
different names are statistically independent, and the same (seed, name) pair
always yields the same sequence.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named child generator of a master seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), *words]))
