"""Deterministic RNG derivation.

Every stochastic unit of work (a problem, a rollout, a bootstrap resample, an
ensemble member) gets its own generator derived from a tuple of non-negative
integers, so running units in any order -- or on any number of workers --
produces identical results. Generators are numpy PCG64 seeded through
SeedSequence; reports record RNG_ID so downstream readers know the algorithm.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

RNG_ID = "numpy-pcg64/seedsequence"


def derive_rng(*parts: int) -> np.random.Generator:
    """Return a fresh Generator for the integer path `parts`.

    Parts must be non-negative integers (phase tags, indices, user seeds).
    """
    clean = []
    for p in parts:
        q = int(p)
        if q < 0:
            raise InvalidInputError(f"seed path parts must be non-negative, got {p!r}")
        clean.append(q)
    if not clean:
        raise InvalidInputError("seed path must contain at least one part")
    return np.random.default_rng(np.random.SeedSequence(clean))
