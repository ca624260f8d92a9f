"""Derived random streams for reproducible parallel simulation.

One root seed drives an entire run. Every consumer (cohort sampling, one
client's local training, one synthetic utterance, ...) gets its own
``numpy.random.Generator`` derived from the root seed plus a purpose label
and optional indices. Streams are independent of execution order, so clients
can train concurrently without sharing mutable RNG state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _token_to_int(token: int | str) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token)
    # Stable across processes and platforms, unlike hash().
    digest = hashlib.blake2b(str(token).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *tokens: int | str) -> np.random.Generator:
    """Return a Generator keyed by (seed, *tokens).

    Equal arguments always yield an identical stream; any difference in the
    token tuple yields a statistically independent one.
    """
    entropy = [_token_to_int(seed)] + [_token_to_int(t) for t in tokens]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
