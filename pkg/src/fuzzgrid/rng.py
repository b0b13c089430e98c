"""Seedable, platform-independent random source.

The algorithm is xorshift64* (Vigna's variant with the 0x2545F4914F6CDD1D
multiplier).  Any reimplementation that follows the same update rule
produces bit-identical streams, which is what makes campaign runs and the
mutant streams reproducible across processes and platforms.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + _SPLITMIX_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, (z ^ (z >> 31)) & MASK64


def derive_seed(master: int, *parts: int | bytes | str) -> int:
    """Derive a 64-bit stream seed from a master seed and context labels.

    Used to give every worker (and every dispatched task) its own
    independent but reproducible stream.
    """
    state = master & MASK64
    state, acc = splitmix64(state)
    for part in parts:
        if isinstance(part, str):
            part = part.encode("utf-8")
        if isinstance(part, bytes):
            for i in range(0, len(part), 8):
                chunk = int.from_bytes(part[i : i + 8], "big")
                state, out = splitmix64(state ^ chunk)
                acc ^= out
        else:
            state, out = splitmix64(state ^ (part & MASK64))
            acc ^= out
    return acc or _SPLITMIX_GAMMA


class Rng:
    """xorshift64* stream.  State is never zero."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = (seed & MASK64) or _SPLITMIX_GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n).  n must be positive."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        return self.next_u64() % n

    def in_range(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        return lo + self.below(hi - lo + 1)

    def chance(self, num: int, den: int) -> bool:
        return self.below(den) < num

    def take_bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += self.next_u64().to_bytes(8, "big")
        return bytes(out[:n])

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def fork(self) -> "Rng":
        return Rng(self.next_u64())
