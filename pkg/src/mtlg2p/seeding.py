"""Named random sub-streams derived from one integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Return a generator for ``(seed, *names)``.

    Names may be strings or non-negative ints, e.g. ``stream(7, "dropout", epoch, batch)``.
    Streams with different names are statistically independent, so changing how
    often one component draws never shifts another component's numbers.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([_key(seed), *map(_key, names)])))
