"""Named random substreams derived from one master seed.

A stream is identified by ``(master_seed, drop_index, tag)`` so every drop
and every purpose within a drop draws from its own independent generator,
whatever order or process the drops run in.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(master_seed: int, drop_index: int, tag: str) -> np.random.Generator:
    """Independent generator for one purpose within one drop."""
    if master_seed < 0 or drop_index < 0:
        raise ValueError("seed and drop index must be non-negative")
    key = zlib.crc32(tag.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(drop_index), key]))
