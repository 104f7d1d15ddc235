"""Portable random streams.

Every random draw in the benchmark goes through :class:`RngStream`, a thin wrapper over
numpy's ``Philox`` counter-based generator (Philox-4x64 with 10 rounds, 256-bit counter
and 128-bit key). Streams are derived from an experiment seed and a tuple of keys through
``numpy.random.SeedSequence``, whose hashing is specified and platform independent, so
``(experiment_seed, dataset, model, split_id, init_id)`` always maps to the same stream.

String keys are folded to integers with CRC-32 of their UTF-8 bytes.
"""

from __future__ import annotations

import zlib
from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

__all__ = ["ALGORITHM", "RngStream", "key_to_int"]

ALGORITHM = "philox4x64-10 (numpy.random.Philox) seeded via numpy.random.SeedSequence"


def key_to_int(key: int | str) -> int:
    """Map a stream key to a non-negative integer."""
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"Stream keys must be non-negative, got {key}")
    return int(key)


class RngStream:
    """Deterministic random stream owned by exactly one consumer."""

    def __init__(self, seed: int, keys: Sequence[int | str] = ()):
        """Create the stream for ``seed`` and the derivation path ``keys``."""
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.seed = seed
        self.keys = tuple(keys)
        seq = np.random.SeedSequence(
            entropy=seed, spawn_key=tuple(key_to_int(k) for k in self.keys)
        )
        self._gen = np.random.Generator(np.random.Philox(seq))

    @classmethod
    def derive(cls, experiment_seed: int, *keys: int | str) -> RngStream:
        """Derive the stream identified by ``keys`` under ``experiment_seed``."""
        return cls(experiment_seed, keys)

    def child(self, *keys: int | str) -> RngStream:
        """Derive an independent sub-stream below this stream's path."""
        return RngStream(self.seed, (*self.keys, *keys))

    def uniform(
        self, low: float, high: float, shape: tuple[int, ...], dtype: npt.DTypeLike = np.float32
    ) -> npt.NDArray[np.floating]:
        """Draw i.i.d. uniform values on ``[low, high)``."""
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def random(self, shape: tuple[int, ...]) -> npt.NDArray[np.float64]:
        """Draw i.i.d. uniform values on ``[0, 1)`` in 64-bit."""
        return self._gen.random(size=shape)

    def permutation(self, values: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
        """Return a shuffled copy of ``values``."""
        return self._gen.permutation(values)

    def __repr__(self) -> str:
        """Return a string representation of the stream."""
        return f"<RngStream seed={self.seed} keys={self.keys}>"
