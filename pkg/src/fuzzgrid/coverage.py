"""Edge-coverage bitmaps: hit-count bucketing, novelty detection, and
coverage reconstruction by dry-running seeds.

A coverage map is logically a fixed-size array of bucketed edge hit counts
(one slot per edge id).  Maps are stored sparsely -- only nonzero buckets
are kept -- because synthetic targets touch a handful of edges out of a
64K-slot map.  ``to_bytes`` materializes the dense form for dumps.
"""

from __future__ import annotations

import enum
from typing import Iterable, Mapping

MAP_SIZE = 65536

#: Allowed bucket values after classification.
BUCKETS = (1, 2, 4, 8, 16, 32, 64, 128)


class ContractViolation(ValueError):
    """A caller broke an operation precondition."""


class NoveltyKind(enum.Enum):
    NO_NOVELTY = 0
    NEW_BUCKET = 1
    NEW_EDGE = 2


def classify_count(count: int) -> int:
    """Bucket a raw hit count: 0,1,2,3,4-7,8-15,16-31,32-127,>=128."""
    if count <= 0:
        return 0
    if count == 1:
        return 1
    if count == 2:
        return 2
    if count == 3:
        return 4
    if count < 8:
        return 8
    if count < 16:
        return 16
    if count < 32:
        return 32
    if count < 128:
        return 64
    return 128


class CoverageMap:
    """Bucketed edge coverage over a fixed number of edge slots."""

    __slots__ = ("map_size", "_buckets")

    def __init__(self, map_size: int = MAP_SIZE, buckets: dict[int, int] | None = None):
        self.map_size = map_size
        self._buckets: dict[int, int] = buckets if buckets is not None else {}

    def __len__(self) -> int:
        return self.map_size

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoverageMap):
            return NotImplemented
        return self.map_size == other.map_size and self._buckets == other._buckets

    def __hash__(self):
        raise TypeError("CoverageMap is mutable; not hashable")

    def bucket(self, edge: int) -> int:
        return self._buckets.get(edge, 0)

    def edges(self) -> frozenset[int]:
        return frozenset(self._buckets)

    def items(self):
        return self._buckets.items()

    def edge_count(self) -> int:
        return len(self._buckets)

    def copy(self) -> "CoverageMap":
        return CoverageMap(self.map_size, dict(self._buckets))

    def edge_key(self) -> tuple:
        """Hashable identity of the map contents (dedup comparisons)."""
        return tuple(sorted(self._buckets.items()))

    def to_bytes(self) -> bytes:
        dense = bytearray(self.map_size)
        for edge, bucket in self._buckets.items():
            dense[edge] = bucket
        return bytes(dense)

    @classmethod
    def from_bytes(cls, raw: bytes, map_size: int | None = None) -> "CoverageMap":
        if map_size is None:
            map_size = len(raw)
        if len(raw) != map_size:
            raise ContractViolation(f"expected {map_size} bytes, got {len(raw)}")
        return cls(map_size, {i: b for i, b in enumerate(raw) if b})


def classify_counts(raw, map_size: int = MAP_SIZE) -> CoverageMap:
    """Classify a dense array of raw hit counters into a CoverageMap."""
    if len(raw) != map_size:
        raise ContractViolation(
            f"raw counter array has length {len(raw)}, expected {map_size}"
        )
    buckets = {}
    for edge, count in enumerate(raw):
        b = classify_count(count)
        if b:
            buckets[edge] = b
    return CoverageMap(map_size, buckets)


def classify_hits(hits: Mapping[int, int], map_size: int = MAP_SIZE) -> CoverageMap:
    """Classify a sparse edge->count mapping (the synthetic-target path)."""
    buckets = {}
    for edge, count in hits.items():
        if not 0 <= edge < map_size:
            raise ContractViolation(f"edge id {edge} outside map of size {map_size}")
        b = classify_count(count)
        if b:
            buckets[edge] = b
    return CoverageMap(map_size, buckets)


def merge_and_detect(global_map: CoverageMap, local: CoverageMap) -> NoveltyKind:
    """Merge ``local`` into ``global_map`` (elementwise bucket max) and
    report what the merge revealed: a brand-new edge, a larger bucket at a
    known edge, or nothing."""
    if global_map.map_size != local.map_size:
        raise ContractViolation("coverage map size mismatch")
    kind = NoveltyKind.NO_NOVELTY
    gb = global_map._buckets
    for edge, bucket in local._buckets.items():
        have = gb.get(edge, 0)
        if have == 0:
            kind = NoveltyKind.NEW_EDGE
            gb[edge] = bucket
        elif bucket > have:
            if kind is NoveltyKind.NO_NOVELTY:
                kind = NoveltyKind.NEW_BUCKET
            gb[edge] = bucket
    return kind


def count_edges(cov: CoverageMap) -> int:
    """Number of covered edges; this is a seed's bitmap_size."""
    return cov.edge_count()


def reconstruct(content: bytes, target):
    """Dry-run the target once on the seed content and return the
    ExecResult (classified coverage plus the execution outcome).

    A crash or hang during the dry run is an execution outcome, not a
    reconstruction failure; the coverage observed up to the event is in
    the result.  Deterministic targets yield identical maps on repeat
    calls.
    """
    return target.execute(content)
