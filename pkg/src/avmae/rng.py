"""Deterministic random stream derivation.

Every consumer of randomness derives its own generator from the run seed
plus a string tag (and optional integer keys such as the step index). Two
runs with the same seed therefore draw identical streams regardless of how
many other consumers exist or in which order they are created.
"""

import numpy as np


def _tag_words(tag: str):
    # stable 32-bit words from the tag bytes, 4 bytes per word
    b = tag.encode("utf-8")
    words = []
    for i in range(0, len(b), 4):
        words.append(int.from_bytes(b[i : i + 4], "little"))
    return words or [0]


def stream(seed: int, tag: str, *keys: int) -> np.random.Generator:
    """Generator for (seed, tag, *keys), independent across distinct tags/keys."""
    ss = np.random.SeedSequence([int(seed)] + _tag_words(tag) + [int(k) for k in keys])
    return np.random.Generator(np.random.PCG64(ss))
