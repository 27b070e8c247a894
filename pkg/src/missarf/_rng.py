"""Seed handling shared by all stochastic steps.

Every random decision is keyed so that results do not depend on the order in
which trees, rows or replicates are processed: sub-seeds come from
``SeedSequence`` spawn keys, and per-(row, imputation) uniforms come from a
counter-based hash.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def draw_key(rng) -> int:
    """A 63-bit key drawn from ``rng``; used to root a family of sub-streams."""
    return int(as_generator(rng).integers(0, 2**63 - 1))


def derive_seed(master: int, *keys: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_generator(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys)))


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniforms(key: int, *counters) -> np.ndarray:
    """Uniforms in (0, 1) that are a pure function of ``key`` and the counters.

    Counters broadcast against each other; each distinct counter tuple gives an
    independent-looking draw.
    """
    with np.errstate(over="ignore"):
        z = np.full(np.broadcast(*counters).shape if counters else (), np.uint64(key), dtype=np.uint64)
        for c in counters:
            z = _splitmix(z ^ np.asarray(c, dtype=np.uint64))
        z = _splitmix(z)
    # 53 random bits, shifted off zero
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 2**53)
