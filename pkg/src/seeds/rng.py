"""Seeded random streams with exact state capture for reproducible runs."""

from __future__ import annotations

import numpy as np


class RngStream:
    """A PCG64 stream: identical seed + identical call sequence gives identical draws.

    `draws` counts calls for introspection; `state()`/`set_state()` capture the
    underlying generator exactly so a checkpointed run resumes bit-identically.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def normal(self, shape=None) -> np.ndarray | float:
        """Standard-normal draws; scalar when shape is None."""
        if shape is not None and np.prod(shape) <= 0:
            raise ValueError(f"shape must be positive, got {shape}")
        self.draws += 1
        out = self._gen.standard_normal(size=shape)
        return out

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        self.draws += 1
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high)."""
        self.draws += 1
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    def spawn(self, tag: int) -> "RngStream":
        """Derive an independent child stream deterministically from (seed, tag)."""
        child_seed = np.random.SeedSequence([self.seed, int(tag)]).generate_state(1)[0]
        return RngStream(int(child_seed))

    def state(self) -> np.ndarray:
        """Serialize the generator state as six uint64 words."""
        st = self._gen.bit_generator.state
        s = st["state"]["state"]
        inc = st["state"]["inc"]
        mask = (1 << 64) - 1
        return np.array(
            [s & mask, (s >> 64) & mask, inc & mask, (inc >> 64) & mask,
             int(st["has_uint32"]), st["uinteger"]],
            dtype=np.uint64,
        )

    def set_state(self, words: np.ndarray) -> None:
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (6,):
            raise ValueError(f"rng state must be six uint64 words, got shape {words.shape}")
        w = [int(x) for x in words]
        self._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": w[0] | (w[1] << 64), "inc": w[2] | (w[3] << 64)},
            "has_uint32": int(w[4]),
            "uinteger": int(w[5]),
        }


def sample_gaussian(rng: RngStream, shape) -> np.ndarray:
    """i.i.d. standard-normal array; the stream advances deterministically."""
    return np.asarray(rng.normal(shape), dtype=np.float64)
