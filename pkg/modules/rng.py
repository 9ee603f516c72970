"""
Random Streams Module
Counter-based random streams keyed by (seed, purpose, step, parent).

The run seed fixes a Philox key; every consumer gets its own block of the
256-bit counter space, addressed by the coordinates of the draw. Streams are
therefore independent of how work is split across threads, and building one
costs no hashing.
"""
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]

# Purpose tags keep the counter blocks of different consumers apart.
PROPOSE = 0
RESAMPLE = 1
IMPORTANCE = 2
SPLIT = 3

WORD = 2 ** 32
_PURPOSE_SHIFT = 56


def _entropy(seed: SeedLike) -> list:
    if isinstance(seed, (int, np.integer)):
        values = [int(seed)]
    else:
        values = [int(s) for s in seed]
    if any(v < 0 or v >= WORD for v in values):
        raise ValueError(f"seed components must be 32-bit non-negative integers, got {values}")
    return values


def _philox_key(seed: SeedLike) -> np.ndarray:
    values = _entropy(seed)
    # SeedSequence zero-pads its entropy, so (5,) and (5, 0) would share a key
    # without the component count up front.
    return np.random.SeedSequence([len(values), *values]).generate_state(2, dtype=np.uint64)


class RandomStreams:
    """Factory of independent, reproducible generators for one run."""

    def __init__(self, seed: SeedLike):
        self.seed = seed
        self._key = _philox_key(seed)

    def _generator(self, purpose: int, major: int, minor: int = 0) -> np.random.Generator:
        if not 0 <= major < 2 ** _PURPOSE_SHIFT or minor < 0:
            raise ValueError(f"stream coordinates out of range: {major}, {minor}")
        # the two low words count draws within the stream
        counter = np.array([0, 0, minor, (purpose << _PURPOSE_SHIFT) | major], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def children(self, step: int, parent: int) -> np.random.Generator:
        """Stream from which parent `parent` draws all of its children at `step`."""
        return self._generator(PROPOSE, step, parent)

    def resample(self, step: int) -> np.random.Generator:
        return self._generator(RESAMPLE, step)

    def draw(self, index: int) -> np.random.Generator:
        """Stream for the index-th full-path importance sampling draw."""
        return self._generator(IMPORTANCE, index)

    def split(self, repeat: int) -> np.random.Generator:
        return self._generator(SPLIT, repeat)


def derive_seed(*parts: int) -> tuple:
    """Seed tuple for a sub-run, e.g. derive_seed(seed, MN, M, repetition)."""
    return tuple(_entropy(parts))
