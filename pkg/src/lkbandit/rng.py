"""Seed splitting.

Every random stream in a run is derived from the master seed with
``numpy.random.SeedSequence(master, spawn_key=(trial, crc32(tag)))``.
Streams are keyed by a string tag, so adding an algorithm (which only adds
a ``policy:<name>`` stream) never shifts the environment streams.
"""
from __future__ import annotations

import zlib

import numpy as np

GRAPH = "graph"
POOL = "pool"
TRUTH = "truth"
ROUNDS = "rounds"


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(master: int, tag: str, trial: int | None = None) -> np.random.Generator:
    """Return the generator for ``tag`` in ``trial`` (``None``: trial-independent)."""
    key = (tag_code(tag),) if trial is None else (int(trial), tag_code(tag))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master), spawn_key=key)))


def stream_seed(master: int, tag: str, trial: int | None = None) -> int:
    """A 32-bit integer seed for APIs that still take legacy ``random_state`` ints."""
    return int(stream(master, tag, trial).integers(0, 2**31 - 1))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
