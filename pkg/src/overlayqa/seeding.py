"""Deterministic random streams for byte-reproducible dataset builds.

Every module draws randomness through the helpers below, all of which sit on
top of ``Generator.random()`` of a PCG64 bit generator. PCG64's bit stream and
the uint64 -> float64 mapping of ``random()`` are fixed by the algorithm, so a
given (seed, key) pair yields the same draw sequence on every platform and
worker count. Each helper documents how many draws it consumes; samplers in
other modules document their totals in terms of these.
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_DERIVE_TAG = b"overlayqa.rng.v1"


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a run (PCG64 seeded through SeedSequence)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_rng(global_seed: int, key: str) -> np.random.Generator:
    """Per-sample generator, independent of processing order and worker count.

    The stream depends only on (global_seed, key): blake2b(tag:seed:key)
    supplies the SeedSequence entropy, so any worker can rebuild the exact
    stream for a sample from the run seed and the sample id alone.
    """
    digest = hashlib.blake2b(
        _DERIVE_TAG + b":" + str(int(global_seed)).encode("ascii") + b":" + key.encode("utf-8"),
        digest_size=32,
    ).digest()
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int.from_bytes(digest, "big")))
    )


def uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    """Uniform float in [lo, hi). Consumes 1 draw."""
    return lo + (hi - lo) * rng.random()


def randint(rng: np.random.Generator, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi], both ends inclusive. Consumes 1 draw.

    Built on ``random()`` rather than ``Generator.integers`` so the stream
    contract stays a single documented primitive; the 2^-53 modulo bias is
    irrelevant at our range sizes.
    """
    if hi < lo:
        raise ValueError(f"randint bounds reversed: [{lo}, {hi}]")
    return min(hi, lo + math.floor(rng.random() * (hi - lo + 1)))


def coin(rng: np.random.Generator) -> bool:
    """Fair coin. Consumes 1 draw."""
    return rng.random() < 0.5


def choice(rng: np.random.Generator, seq: Sequence[T]) -> T:
    """Uniform element of a non-empty sequence. Consumes 1 draw."""
    if not seq:
        raise ValueError("choice over an empty sequence")
    return seq[randint(rng, 0, len(seq) - 1)]


def shuffled(rng: np.random.Generator, seq: Sequence[T]) -> list[T]:
    """Fisher-Yates shuffled copy. Consumes len(seq) - 1 draws (0 if empty)."""
    out = list(seq)
    for i in range(len(out) - 1, 0, -1):
        j = randint(rng, 0, i)
        out[i], out[j] = out[j], out[i]
    return out
