"""Deterministic 64-bit PRNG used for weight initialization.

Weight buffers must be bit-reproducible from a single 64-bit seed with no
dependency on the numpy generator zoo, so initialization uses a splitmix64
counter sequence mapped to normals via Box-Muller.  Everything else in the
package (shuffling, synthesis, test data) uses ``numpy.random.Generator``
seeded explicitly.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """splitmix64 stream; uniforms carry 53 bits, normals come from Box-Muller."""

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def _draw(self, count: int) -> np.ndarray:
        """Next ``count`` raw 64-bit outputs, advancing the stream."""
        offsets = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        states = (np.uint64(self._state) + offsets).astype(np.uint64)
        self._state = (self._state + count * _GOLDEN) & _MASK64
        return _mix(states)

    def next_u64(self) -> int:
        return int(self._draw(1)[0])

    def uniforms(self, count: int) -> np.ndarray:
        """Doubles in [0, 1) with 53 random bits each."""
        return (self._draw(count) >> np.uint64(11)) * (1.0 / (1 << 53))

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, count: int, std: float = 1.0) -> np.ndarray:
        """Standard normals scaled by std; each call consumes whole Box-Muller pairs."""
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = np.maximum(u[0::2], 2.0 ** -53)  # keep log() finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:count] * std
