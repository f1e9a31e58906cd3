"""Seeded random streams.

All randomness goes through numpy's ``Generator`` on the PCG64 bit generator
(PCG XSL RR 128/64), seeded from a ``SeedSequence`` built from the run seed and
a stream label. PCG64 output is specified bit-for-bit, so a (seed, label) pair
produces the same draws on every platform.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str = "", *extra: int) -> np.random.Generator:
    """Independent generator for ``label`` derived from the run ``seed``."""
    key = [int(seed), zlib.crc32(label.encode("utf-8")), *map(int, extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
