"""Seed mutation engine: deterministic stage plus havoc/splice.

The deterministic stage yields, in fixed order: walking bit flips (1/2/4
bits, most-significant bit of byte 0 first), walking byte flips (1/2/4
bytes), wrapping arithmetic +/-1..35 over 8/16/32-bit big-endian windows,
and interesting-value substitutions.  Order and count are pure functions
of the seed length; ``deterministic_count`` gives the closed form.

Havoc stacks 1..64 random operators (power-of-two distributed); splice
joins a prefix of one seed to the suffix of another at a point inside
their differing region, then runs havoc.  All randomness comes from an
explicit xorshift64* stream, so mutant streams are bit-identical across
processes and platforms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

from .rng import Rng

MAX_INPUT_LEN = 1 << 20

ARITH_MAX = 35

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = (-2147483648, -100663046, -32769, 32768, 65535, 65536,
                  100663045, 2147483647)


class Stage(enum.Enum):
    DETERMINISTIC = "deterministic"
    HAVOC = "havoc"
    SPLICE = "splice"


@dataclass
class MutationPlan:
    stage: Stage
    rng_seed: int
    energy: int

    def __post_init__(self):
        if self.energy < 1:
            raise ValueError("energy must be >= 1")


def _flip_bits(data: bytearray, bit: int, n: int) -> None:
    for k in range(n):
        b = bit + k
        data[b >> 3] ^= 0x80 >> (b & 7)


def deterministic_mutants(seed: bytes) -> Iterator[bytes]:
    """Yield the deterministic-stage mutants of ``seed`` in fixed order."""
    if not seed:
        raise ValueError("seed must be non-empty")
    length = len(seed)
    nbits = 8 * length

    for width in (1, 2, 4):
        for bit in range(nbits - width + 1):
            out = bytearray(seed)
            _flip_bits(out, bit, width)
            yield bytes(out)

    for width in (1, 2, 4):
        for pos in range(length - width + 1):
            out = bytearray(seed)
            for k in range(width):
                out[pos + k] ^= 0xFF
            yield bytes(out)

    for width in (1, 2, 4):
        mod = 1 << (8 * width)
        for pos in range(length - width + 1):
            base = int.from_bytes(seed[pos : pos + width], "big")
            for delta in range(1, ARITH_MAX + 1):
                for value in ((base + delta) % mod, (base - delta) % mod):
                    out = bytearray(seed)
                    out[pos : pos + width] = value.to_bytes(width, "big")
                    yield bytes(out)

    for width, values in ((1, INTERESTING_8), (2, INTERESTING_16), (4, INTERESTING_32)):
        mod = 1 << (8 * width)
        for pos in range(length - width + 1):
            for value in values:
                out = bytearray(seed)
                out[pos : pos + width] = (value % mod).to_bytes(width, "big")
                yield bytes(out)


def deterministic_count(length: int) -> int:
    """Closed-form mutant count of the deterministic stage for a seed of
    ``length`` bytes."""
    if length < 1:
        return 0
    nbits = 8 * length
    total = 0
    for width in (1, 2, 4):
        total += max(nbits - width + 1, 0)
    for width in (1, 2, 4):
        total += max(length - width + 1, 0)
    for width in (1, 2, 4):
        total += max(length - width + 1, 0) * ARITH_MAX * 2
    for width, values in ((1, INTERESTING_8), (2, INTERESTING_16), (4, INTERESTING_32)):
        total += max(length - width + 1, 0) * len(values)
    return total


def _havoc_once(data: bytearray, rng: Rng, max_len: int) -> None:
    op = rng.below(8)
    if op == 0:  # flip one bit
        bit = rng.below(8 * len(data))
        data[bit >> 3] ^= 0x80 >> (bit & 7)
    elif op == 1:  # interesting byte
        data[rng.below(len(data))] = rng.choice(INTERESTING_8) & 0xFF
    elif op == 2 and len(data) >= 2:  # interesting 16-bit word, big-endian
        pos = rng.below(len(data) - 1)
        value = rng.choice(INTERESTING_16) % (1 << 16)
        data[pos : pos + 2] = value.to_bytes(2, "big")
    elif op == 3:  # wrapping byte arithmetic
        pos = rng.below(len(data))
        delta = rng.in_range(1, ARITH_MAX)
        if rng.chance(1, 2):
            delta = -delta
        data[pos] = (data[pos] + delta) & 0xFF
    elif op == 4:  # random byte value
        data[rng.below(len(data))] = rng.below(256)
    elif op == 5 and len(data) >= 2:  # delete block
        size = rng.in_range(1, max(len(data) // 2, 1))
        pos = rng.below(len(data) - size + 1)
        del data[pos : pos + size]
    elif op == 6:  # clone block
        size = rng.in_range(1, len(data))
        src = rng.below(len(data) - size + 1)
        dst = rng.below(len(data) + 1)
        block = data[src : src + size]
        data[dst:dst] = block
        if len(data) > max_len:
            del data[max_len:]
    elif op == 7:  # overwrite block with a copy or a constant
        size = rng.in_range(1, len(data))
        dst = rng.below(len(data) - size + 1)
        if rng.chance(1, 2):
            src = rng.below(len(data) - size + 1)
            data[dst : dst + size] = data[src : src + size]
        else:
            data[dst : dst + size] = bytes([rng.below(256)]) * size


def havoc_mutant(seed: bytes, rng: Rng, max_len: int = MAX_INPUT_LEN) -> bytes:
    """Apply a random stack of 1..64 havoc operators to the seed."""
    if not seed:
        raise ValueError("seed must be non-empty")
    cap = min(max(4 * len(seed), 1), max_len)
    data = bytearray(seed)
    stack = 1 << rng.below(7)
    for _ in range(stack):
        _havoc_once(data, rng, cap)
        if not data:
            data = bytearray(b"\x00")
        if len(data) > cap:
            del data[cap:]
    return bytes(data)


def splice_point(a: bytes, b: bytes, rng: Rng) -> int | None:
    """Split position inside the region where ``a`` and ``b`` differ, or
    None when the inputs are byte-identical over their common length and
    equal length."""
    if a == b:
        return None
    n = min(len(a), len(b))
    first = next((i for i in range(n) if a[i] != b[i]), n)
    last = next((i for i in range(n - 1, -1, -1) if a[i] != b[i]), n - 1)
    if first >= n:  # one is a strict prefix of the other
        return n
    lo, hi = first, max(last, first) + 1
    return rng.in_range(lo, hi) if hi > lo else lo


def splice(a: bytes, b: bytes, rng: Rng, max_len: int = MAX_INPUT_LEN) -> bytes:
    """Concatenate a prefix of ``a`` with the suffix of ``b`` at a point
    in their differing region, then havoc.  Identical inputs degenerate to
    havoc on ``a``."""
    if not a or not b:
        raise ValueError("splice inputs must be non-empty")
    point = splice_point(a, b, rng)
    if point is None:
        return havoc_mutant(a, rng, max_len)
    joined = a[:point] + b[point:]
    if not joined:
        joined = a
    return havoc_mutant(joined, rng, max_len)
