"""Reproducible RNG streams keyed by (seed, task index, ...)."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one task; same (seed, keys) gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)))


def as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Accept a seed or a Generator; return the generator and the seed if known."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        raise TypeError("an integer seed or numpy Generator is required")
    return np.random.default_rng(int(rng)), int(rng)
