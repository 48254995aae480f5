"""Counter-based pseudo-random generator.

The whole engine draws randomness from one generator whose state is three
integers (seed, stream, counter), so it serializes into checkpoints exactly
and resuming reproduces the remaining draws bit for bit.

Output function (version 1), all arithmetic mod 2^64:

    base      = mix64(seed + GAMMA * mix64(stream + GAMMA))
    word(k)   = mix64(base + (k + 1) * GAMMA)

where ``mix64`` is the SplitMix64 finalizer and GAMMA the golden-ratio
increment 0x9E3779B97F4A7C15.  ``word(counter)`` yields the next raw 64-bit
value; every draw advances ``counter`` by the number of words consumed.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

RNG_VERSION = 1


def mix64(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """SplitMix64 finalizer; accepts uint64 scalars or arrays."""
    with np.errstate(over="ignore"):  # modular 64-bit arithmetic is intended
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class CounterRng:
    """Deterministic counter-based RNG with O(1) serializable state."""

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter) & 0xFFFFFFFFFFFFFFFF
        with np.errstate(over="ignore"):
            self._base = mix64(np.uint64(self.seed) + GAMMA * mix64(np.uint64(self.stream) + GAMMA))

    @property
    def state(self) -> tuple[int, int, int]:
        return (self.seed, self.stream, self.counter)

    @classmethod
    def from_state(cls, state) -> "CounterRng":
        seed, stream, counter = (int(v) for v in state)
        return cls(seed, stream, counter)

    def clone_stream(self, stream: int) -> "CounterRng":
        """Independent generator with the same seed on a different stream."""
        return CounterRng(self.seed, stream, 0)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 words; advances the counter by ``n``."""
        with np.errstate(over="ignore"):
            ks = np.uint64(self.counter) + (np.arange(1, n + 1, dtype=np.uint64) * GAMMA)
            out = mix64(self._base + ks)
        self.counter = (self.counter + n) & 0xFFFFFFFFFFFFFFFF
        return out

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray | float:
        """Uniform float64 in [low, high); 53-bit mantissa resolution."""
        scalar = shape is None
        shape = () if scalar else shape
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u = low + u * (high - low)
        return float(u[0]) if scalar else u.reshape(shape)

    def normal(self, shape=None) -> np.ndarray | float:
        """Standard normal via Box-Muller; consumes two words per pair."""
        scalar = shape is None
        shape = () if scalar else shape
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        npairs = (n + 1) // 2
        u = (self.raw(2 * npairs) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u1, u2 = u[:npairs], u[npairs:]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return float(z[0]) if scalar else z.reshape(shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray | int:
        """Integers uniform in [low, high); multiply-shift from raw words."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        scalar = shape is None
        shape = () if scalar else shape
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        span = np.uint64(high - low)
        # 128-bit multiply-high keeps the mapping unbiased up to 2^-64.
        words = self.raw(n)
        hi = ((words.astype(object) * int(span)) >> 64)
        out = np.array([int(v) for v in hi], dtype=np.int64) + low
        return int(out[0]) if scalar else out.reshape(shape)

    def choice(self, seq):
        """One element of ``seq``, uniform."""
        return seq[self.integers(0, len(seq))]

    def __repr__(self):
        return f"CounterRng(seed={self.seed}, stream={self.stream}, counter={self.counter})"
