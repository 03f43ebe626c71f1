"""Portable pseudo-random streams.

``SplitMix64`` is the whole generator: a 64-bit counter advanced by the
golden-ratio increment and passed through the standard finalizer.  All
derived quantities are defined on top of ``next_u64`` so any language can
reproduce a stream bit for bit:

* ``uniform()``  = ``(next_u64() >> 11) * 2**-53`` in [0, 1)
* ``normal()``   = Box-Muller cosine branch on two uniforms
  ``u1 = 1 - uniform()``, ``u2 = uniform()``:
  ``sqrt(-2 ln u1) * cos(2 pi u2)`` (the sine branch is discarded)
* ``poisson(lam)`` = Knuth's multiplication method on uniforms

Sub-streams are derived from a root seed and a text label with
:func:`derive_seed`: FNV-1a-64 of the UTF-8 label is XOR-ed into the root,
then one SplitMix64 output of that value is the child seed.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(root: int, label: str) -> int:
    return _mix((((root & MASK64) ^ fnv1a64(label)) + GOLDEN) & MASK64)


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high] inclusive."""
        return low + int(self.uniform() * (high - low + 1))

    def poisson(self, lam: float) -> int:
        if lam <= 0:
            return 0
        limit = math.exp(-lam)
        k, p = 0, self.uniform()
        while p > limit:
            k += 1
            p *= self.uniform()
        return k

    def choice_sign(self) -> float:
        return 1.0 if self.uniform() < 0.5 else -1.0
