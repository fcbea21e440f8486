"""
Seeded random streams.

All randomness flows through numpy Generators over the counter-based
Philox bit generator. A stream is identified by the run seed plus a
path of ints/strings, so independent consumers never share state and a
run can be replayed from its manifest.
"""

import hashlib
from typing import Protocol

import numpy as np


class RandomStream(Protocol):
    """The subset of numpy.random.Generator the engine draws from."""

    def exponential(self, scale: float = ..., size=...): ...

    def geometric(self, p: float, size=...): ...

    def standard_normal(self, size=..., dtype=...): ...

    def random(self, size=..., dtype=...): ...

    def choice(self, a, size=..., replace: bool = ..., p=...): ...


def _path_key(part: int | str) -> int:
    if isinstance(part, int):
        return part
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream_path(*path: int | str) -> tuple[int, ...]:
    """Spawn key used for a named stream (recorded in manifests)."""
    return tuple(_path_key(p) for p in path)


def make_stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent Philox stream for (seed, path)."""
    seq = np.random.SeedSequence(seed, spawn_key=stream_path(*path))
    return np.random.Generator(np.random.Philox(seq))
