"""Counter-based SplitMix64 random numbers.

Every draw is a pure function of ``(seed, stream, counter)``::

    state0 = mix64((seed + GOLDEN * (stream + 1)) mod 2**64)
    draw   = mix64((state0 + GOLDEN * (counter + 1)) mod 2**64)

where ``GOLDEN = 0x9E3779B97F4A7C15`` and ``mix64`` is the SplitMix64
finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

(all arithmetic modulo 2**64). In other words ``draw`` is output number
``counter`` of a plain SplitMix64 generator whose state starts at
``state0``. Uniform doubles take the top 53 bits: ``(draw >> 11) * 2**-53``.

Because draws are keyed by entity index rather than by position in a
shared sequence, results never depend on iteration or thread order.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# stream domains; the entity index occupies the low 40 bits
DOMAIN_ROCK = 1
DOMAIN_PARTICLE = 2
DOMAIN_NOISE = 3
DOMAIN_SPLIT = 4


def stream_id(domain: int, index: int) -> int:
    return (domain << 40) | index


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def draw(seed: int, stream: int, counter: int) -> int:
    state0 = mix64(seed + GOLDEN * (stream + 1))
    return mix64(state0 + GOLDEN * (counter + 1))


def uniform(seed: int, stream: int, counter: int) -> float:
    return (draw(seed, stream, counter) >> 11) * 2.0**-53


class SplitMix64:
    """Sequential SplitMix64, for callers that want a plain stream."""

    def __init__(self, state: int) -> None:
        self.state = state & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53


# vectorized versions; numpy uint64 arithmetic wraps modulo 2**64

def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def draw_array(seed: int, streams, counters) -> np.ndarray:
    """Broadcasting array form of :func:`draw`."""
    streams = np.asarray(streams, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state0 = _mix64_array(
            np.uint64(seed & MASK64) + np.uint64(GOLDEN) * (streams + np.uint64(1))
        )
        return _mix64_array(state0 + np.uint64(GOLDEN) * (counters + np.uint64(1)))


def uniform_array(seed: int, streams, counters) -> np.ndarray:
    bits = draw_array(seed, streams, counters) >> np.uint64(11)
    return bits.astype(np.float64) * 2.0**-53


def shuffled(items: list, seed: int) -> list:
    """Fisher-Yates shuffle driven by the counter RNG (domain SPLIT)."""
    out = list(items)
    stream = stream_id(DOMAIN_SPLIT, 0)
    for k, i in enumerate(range(len(out) - 1, 0, -1)):
        j = draw(seed, stream, k) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out
