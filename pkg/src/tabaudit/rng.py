"""Cell-keyed random streams.

Every random draw in the toolkit comes from a Philox4x64 counter-based
generator whose 128-bit key is derived from a ``(dataset, seed, condition)``
triple via SHA-256. Identical keys give identical streams regardless of
process, worker count or call order; distinct keys give independent streams.
"""
import hashlib

import numpy as np

RNG_ID = "philox4x64-10/sha256(dataset|seed|condition)[:16]"


def cell_key(dataset, seed, condition=""):
    """Return the 128-bit Philox key for one grid cell, as a python int."""
    text = f"{dataset}|{int(seed)}|{condition}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:16], "little")


def cell_rng(dataset, seed, condition=""):
    """A fresh ``numpy.random.Generator`` for one (dataset, seed, condition) cell."""
    return np.random.Generator(np.random.Philox(key=cell_key(dataset, seed, condition)))


def seed_rng(seed):
    """Generator for bare-integer seeds (statistics helpers, tests)."""
    return np.random.Generator(np.random.Philox(key=int(seed)))
