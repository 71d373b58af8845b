"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox stream whose key
is ``(tag, seed)`` and whose counter block is a substream index (a trial
number, a realization number). Streams are therefore a pure function of
``(seed, tag, index)``: trials can run in any order, on any worker, and
produce the same numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

# one tag per consumer so that streams never overlap
TAG_BONDS = 1
TAG_TRIALS = 2
TAG_ORIENTED = 3
TAG_GRAPHS = 4


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Generator for substream ``index`` of the ``(seed, tag)`` family."""
    key = (int(tag) << 64) | check_seed(seed)
    # the substream index occupies the top counter word; the low words are
    # left for the draws themselves
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(index)]))


def uniforms(seed: int, tag: int, n: int) -> np.ndarray:
    """The first ``n`` uniforms of the ``(seed, tag)`` stream.

    Element ``i`` depends only on ``(seed, tag, i)``, never on ``n``.
    """
    return stream(seed, tag).random(n)


def derive_seed(seed: int, label: str) -> int:
    """A child seed for a named sub-experiment, stable across runs."""
    digest = hashlib.sha256(f"{check_seed(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
