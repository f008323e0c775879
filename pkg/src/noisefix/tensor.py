"""Dense image/noise tensor and deterministic random number generation.

All pipeline data (images, noise maps, masks) travels as `Tensor3`: a
height x width x channels array of float64, row-major, immutable after
construction. Randomness flows from `Rng`, a seeded PCG64 generator that
can be split deterministically for independent pipeline stages.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Tensor3", "Rng", "draw_standard_normal"]


class Tensor3:
    """Immutable h x w x c tensor of finite float64 values.

    The backing array is copied on construction and marked read-only, so
    instances are safe to share across threads.
    """

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"tensor must have rank 3, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor entries must be finite (no NaN/Inf)")
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """Read-only (h, w, c) float64 view of the contents."""
        return self._data

    @property
    def height(self) -> int:
        return self._data.shape[0]

    @property
    def width(self) -> int:
        return self._data.shape[1]

    @property
    def channels(self) -> int:
        return self._data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def flat(self) -> np.ndarray:
        """Contents flattened to a 1-D copy in row-major order."""
        return self._data.reshape(-1).copy()

    def __repr__(self) -> str:
        h, w, c = self.shape
        return f"Tensor3({h}x{w}x{c})"

    def allclose(self, other: "Tensor3", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        return self.shape == other.shape and np.allclose(
            self._data, other._data, rtol=rtol, atol=atol
        )


class Rng:
    """Seeded random generator with deterministic splitting.

    Wraps numpy's PCG64 bit generator behind a `SeedSequence`; the same
    (seed, key) pair always yields the same stream, and `split(i)` derives
    an independent stream for stage or worker `i` without consuming state.
    Instances are single-owner: do not share one Rng between threads.
    """

    __slots__ = ("seed", "key", "_gen")

    def __init__(self, seed: int, key: tuple[int, ...] = ()) -> None:
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, index: int) -> "Rng":
        """Independent generator for sub-stage `index` of this stream."""
        return Rng(self.seed, self.key + (int(index),))

    def standard_normal(self, shape) -> np.ndarray:
        """I.i.d. N(0,1) draws (float64, ziggurat method)."""
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


def draw_standard_normal(rng: Rng, height: int, width: int, channels: int) -> Tensor3:
    """Tensor of i.i.d. standard-normal entries from the given generator."""
    if min(height, width, channels) < 1:
        raise ValueError("tensor dimensions must be positive")
    return Tensor3(rng.standard_normal((height, width, channels)))
