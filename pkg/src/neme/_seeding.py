"""Seed mixing shared by every stochastic component.

All randomness is derived from one integer base seed combined with a tuple of
keys (integers or strings).  Strings are folded through CRC32 so the mapping is
stable across interpreter runs, unlike ``hash()``.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k) & 0xFFFFFFFF


def derive_seed(base: int, *keys) -> int:
    """Deterministically mix ``keys`` into ``base`` and return a 32-bit seed."""
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFF, *(_key(k) for k in keys)])
    return int(ss.generate_state(1)[0])


def rng_for(base: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base) & 0xFFFFFFFF, *(_key(k) for k in keys)]))
