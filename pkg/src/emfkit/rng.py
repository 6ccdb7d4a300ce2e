"""Self-contained seeded random number generation.

All randomness in this package flows through :class:`Pcg32`, a PCG-XSH-RR
64/32 generator (O'Neill's pcg32).  The algorithm is pinned here, with test
vectors in the test suite, so that experiment streams are bit-reproducible
across platforms and releases:

* state update: ``s' = s * 6364136223846793005 + inc  (mod 2^64)``,
  ``inc`` odd.
* output: ``xorshifted = ((s >> 18) ^ s) >> 27`` (low 32 bits), rotated
  right by ``s >> 59``.
* seeding, given ``(seed, seq)``: ``inc = (seq << 1) | 1``, ``s = 0``,
  step, ``s += seed``, step.

Derived streams are layered on the raw 32-bit output and are equally pinned:

* ``uniform``: two draws per double, hi word first; value is the top 53
  bits of the 64-bit concatenation times ``2**-53`` (in ``[0, 1)``).
* ``normal``: Box-Muller on uniform pairs ``(u1, u2)``; the pair yields
  ``r*cos(theta), r*sin(theta)`` with ``r = sqrt(-2*log(1 - u1))`` and
  ``theta = 2*pi*u2``.  An odd request consumes a full pair and drops the
  second value.
* ``below(bound)``: unbiased bounded integers by rejection (discard raw
  draws below ``2^32 mod bound``).
"""

from __future__ import annotations

import math

import numpy as np

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1


class Pcg32:
    """PCG-XSH-RR 64/32 stream identified by (seed, seq)."""

    def __init__(self, seed: int, seq: int = 0):
        if seed < 0 or seq < 0:
            raise ValueError("seed and seq must be nonnegative integers")
        self._inc = (((seq << 1) | 1)) & _MASK64
        self._state = 0
        self.next_uint32()
        self._state = (self._state + seed) & _MASK64
        self.next_uint32()

    def next_uint32(self) -> int:
        old = self._state
        self._state = (old * _MULT + self._inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) without modulo bias."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 32) % bound
        while True:
            r = self.next_uint32()
            if r >= threshold:
                return r % bound

    def uint32_array(self, count: int) -> np.ndarray:
        """Vectorized batch of raw draws, identical to `count` scalar calls.

        Uses the LCG jump-ahead identity s_i = a^i s_0 + c * sum_{j<i} a^j,
        with all arithmetic wrapping mod 2^64 in uint64 arrays.
        """
        if count < 0:
            raise ValueError("count must be nonnegative")
        if count == 0:
            return np.empty(0, dtype=np.uint32)
        mult = np.uint64(_MULT)
        powers = np.full(count, mult, dtype=np.uint64)
        powers[0] = 1
        np.multiply.accumulate(powers, out=powers)  # a^0 .. a^(count-1)
        geo = np.zeros(count, dtype=np.uint64)      # sum_{j<i} a^j
        np.cumsum(powers[:-1], out=geo[1:])
        olds = powers * np.uint64(self._state) + geo * np.uint64(self._inc)
        # advance the scalar state past the batch
        last = int(olds[-1])
        self._state = (last * _MULT + self._inc) & _MASK64
        xorshifted = (((olds >> np.uint64(18)) ^ olds) >> np.uint64(27)).astype(np.uint32)
        rot = (olds >> np.uint64(59)).astype(np.uint32)
        return (xorshifted >> rot) | (xorshifted << ((np.uint32(32) - rot) & np.uint32(31)))

    def uniform(self, count: int) -> np.ndarray:
        """i.i.d. doubles in [0, 1), 53-bit resolution."""
        raw = self.uint32_array(2 * count).astype(np.uint64)
        hi, lo = raw[0::2], raw[1::2]
        bits = (hi << np.uint64(32)) | lo
        return (bits >> np.uint64(11)) * (2.0 ** -53)

    def normal(self, count: int) -> np.ndarray:
        """i.i.d. standard normals via Box-Muller."""
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = (2.0 * math.pi) * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count]

    def permutation_prefix(self, n: int, count: int) -> np.ndarray:
        """First `count` elements of a Fisher-Yates shuffle of range(n).

        Draws exactly `count` bounded integers; the untouched tail of the
        virtual array is never materialized.
        """
        if not 0 <= count <= n:
            raise ValueError("need 0 <= count <= n")
        picked = np.empty(count, dtype=np.int64)
        moved: dict[int, int] = {}
        for i in range(count):
            j = i + self.below(n - i)
            vi = moved.get(i, i)
            vj = moved.get(j, j)
            picked[i] = vj
            moved[j] = vi
        return picked
