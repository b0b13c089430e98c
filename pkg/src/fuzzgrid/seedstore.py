"""Seed store: content-addressed seeds, fuzzing status, crashes, and the
pending-evaluation queue, plus the per-worker read-through cache.

The store core is a plain in-memory map guarded by a lock, with an
optional write-ahead log (append-only, length-prefixed records) so a
campaign can be replayed.  The networked service in ``net`` wraps this
core; simulated campaigns call it directly.
"""

from __future__ import annotations

import enum
import hashlib
import threading
from collections import deque
from dataclasses import dataclass, field, replace

from . import protocol
from .mutation import MAX_INPUT_LEN

#: Content hash algorithm for seed ids (lowercase hex digest).
HASH_ALGORITHM = "sha256"


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class SizeError(StoreError):
    pass


class InvalidTransition(StoreError):
    pass


class IntegrityError(StoreError):
    """Stored or fetched content does not hash to its id."""


class SeedState(enum.Enum):
    PENDING_EVALUATION = 0
    ACTIVE = 1
    DISCARDED = 2


def seed_id_for(content: bytes) -> str:
    return hashlib.new(HASH_ALGORITHM, content).hexdigest()


@dataclass(frozen=True)
class Seed:
    id: str
    content: bytes
    parent: str | None
    discovered_at: int
    origin: str


@dataclass
class FuzzStatus:
    depth: int = 0
    handicap: int = 0
    bitmap_size: int = 0
    exec_time_us: int = 0
    fuzz_count: int = 0
    favored: bool = False
    state: SeedState = SeedState.PENDING_EVALUATION

    def copy(self) -> "FuzzStatus":
        return replace(self)


@dataclass(frozen=True)
class CrashRecord:
    id: str
    content: bytes
    parent: str | None
    outcome: str                # "crash" | "hang"
    discovered_at: int
    origin: str

    def __post_init__(self):
        if self.outcome not in ("crash", "hang"):
            raise ValueError(f"bad crash outcome {self.outcome!r}")


class LocalCache:
    """Read-through id->Seed cache kept by every worker."""

    def __init__(self):
        self._seeds: dict[str, Seed] = {}
        self.hits = 0
        self.misses = 0

    def get(self, seed_id: str) -> Seed | None:
        seed = self._seeds.get(seed_id)
        if seed is None:
            self.misses += 1
        else:
            self.hits += 1
        return seed

    def put(self, seed: Seed) -> None:
        self._seeds[seed.id] = seed

    def __len__(self):
        return len(self._seeds)


# --- write-ahead log -------------------------------------------------------

WAL_SEED = 1
WAL_STATUS = 2
WAL_DISCARD = 3
WAL_ACTIVATE = 4
WAL_CRASH = 5


class WriteAheadLog:
    """Append-only record log: 4-byte big-endian length, tag byte, payload."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "ab")

    def append(self, tag: int, payload: bytes) -> None:
        record = len(payload).to_bytes(4, "big") + bytes([tag]) + payload
        self._fh.write(record)
        self._fh.flush()

    def close(self):
        self._fh.close()

    @staticmethod
    def read(path: str):
        """Yield (tag, payload) records from a log file."""
        with open(path, "rb") as fh:
            while True:
                head = fh.read(4)
                if not head:
                    return
                length = int.from_bytes(head, "big")
                body = fh.read(1 + length)
                if len(body) != 1 + length:
                    raise StoreError("truncated log record")
                yield body[0], body[1:]


def _status_payload(seed_id: str, status: FuzzStatus) -> bytes:
    msg = protocol.StatusValue(
        seed_id=seed_id, depth=status.depth, handicap=status.handicap,
        bitmap_size=status.bitmap_size, exec_time_us=status.exec_time_us,
        fuzz_count=status.fuzz_count, favored=int(status.favored),
        state=status.state.value,
    )
    return protocol.encode(msg)


# --- store core ------------------------------------------------------------

class StoreCore:
    """Linearizable seed/status/crash store with a FIFO pending queue.

    Operations are serialized by a single lock; the pending queue delivers
    every id to exactly one caller of pop_pending.  With ``audit`` set the
    content of discarded seeds is retained (acceptance runs need the full
    log); production mode drops it.
    """

    def __init__(self, max_input_len: int = MAX_INPUT_LEN,
                 audit: bool = False, wal_path: str | None = None):
        self.max_input_len = max_input_len
        self.audit = audit
        self._lock = threading.Lock()
        self._seeds: dict[str, Seed] = {}
        self._status: dict[str, FuzzStatus] = {}
        self._pending: deque[str] = deque()
        self._crashes: dict[str, CrashRecord] = {}
        self._wal = WriteAheadLog(wal_path) if wal_path else None
        #: chronological (op, seed_id) event log for campaign audits
        self.events: list[tuple[str, str]] = []

    # -- seeds

    def put_seed(self, content: bytes, parent: str | None, discovered_at: int,
                 origin: str, status: FuzzStatus) -> tuple[str, bool]:
        """Store a seed; returns (id, created).  Idempotent on duplicate
        content.  Pending seeds enter the evaluation queue exactly once;
        initial (Active) seeds bypass it."""
        if len(content) > self.max_input_len:
            raise SizeError(f"seed of {len(content)} bytes exceeds limit")
        seed_id = seed_id_for(content)
        with self._lock:
            if seed_id in self._seeds:
                return seed_id, False
            seed = Seed(seed_id, content, parent, discovered_at, origin)
            self._seeds[seed_id] = seed
            self._status[seed_id] = status.copy()
            if status.state is SeedState.PENDING_EVALUATION:
                self._pending.append(seed_id)
            self.events.append(("put", seed_id))
            if self._wal:
                msg = protocol.PutSeed(
                    content=content, parent=parent or "",
                    discovered_at=discovered_at, origin=origin,
                    depth=status.depth, handicap=status.handicap,
                    bitmap_size=status.bitmap_size,
                    exec_time_us=status.exec_time_us,
                    fuzz_count=status.fuzz_count, favored=int(status.favored),
                    state=status.state.value,
                )
                self._wal.append(WAL_SEED, protocol.encode(msg))
            return seed_id, True

    def get_seed(self, seed_id: str, include_discarded: bool = False) -> Seed:
        with self._lock:
            seed = self._seeds.get(seed_id)
            if seed is None:
                raise NotFound(seed_id)
            status = self._status[seed_id]
            if status.state is SeedState.DISCARDED and not include_discarded:
                raise NotFound(f"{seed_id} (discarded)")
            if seed.content is not None and seed_id_for(seed.content) != seed_id:
                raise IntegrityError(seed_id)
            return seed

    def get_status(self, seed_id: str) -> FuzzStatus:
        with self._lock:
            status = self._status.get(seed_id)
            if status is None:
                raise NotFound(seed_id)
            return status.copy()

    def update_status(self, seed_id: str, fuzz_count_delta: int = 0,
                      favored: bool | None = None) -> FuzzStatus:
        """Atomic read-modify-write of mutable status fields."""
        with self._lock:
            status = self._status.get(seed_id)
            if status is None:
                raise NotFound(seed_id)
            status.fuzz_count += fuzz_count_delta
            if favored is not None:
                status.favored = favored
            if self._wal:
                self._wal.append(WAL_STATUS, _status_payload(seed_id, status))
            return status.copy()

    # -- evaluation queue

    def pop_pending(self, max_ids: int) -> list[str]:
        if max_ids < 1:
            raise StoreError("max must be >= 1")
        with self._lock:
            out = []
            while self._pending and len(out) < max_ids:
                out.append(self._pending.popleft())
            return out

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)

    def activate_seed(self, seed_id: str, bitmap_size: int,
                      exec_time_us: int) -> FuzzStatus:
        """PendingEvaluation -> Active, recording the evaluator's measured
        bitmap size and execution time."""
        with self._lock:
            status = self._status.get(seed_id)
            if status is None:
                raise NotFound(seed_id)
            if status.state is not SeedState.PENDING_EVALUATION:
                raise InvalidTransition(
                    f"cannot activate seed in state {status.state.name}")
            status.state = SeedState.ACTIVE
            status.bitmap_size = bitmap_size
            status.exec_time_us = exec_time_us
            self.events.append(("activate", seed_id))
            if self._wal:
                self._wal.append(WAL_ACTIVATE, _status_payload(seed_id, status))
            return status.copy()

    def discard_seed(self, seed_id: str) -> None:
        with self._lock:
            status = self._status.get(seed_id)
            if status is None:
                raise NotFound(seed_id)
            if status.state is not SeedState.PENDING_EVALUATION:
                raise InvalidTransition(
                    f"cannot discard seed in state {status.state.name}")
            status.state = SeedState.DISCARDED
            if not self.audit:
                seed = self._seeds[seed_id]
                self._seeds[seed_id] = Seed(seed.id, None, seed.parent,
                                            seed.discovered_at, seed.origin)
            self.events.append(("discard", seed_id))
            if self._wal:
                self._wal.append(WAL_DISCARD, _status_payload(seed_id, status))

    def active_ids(self) -> list[str]:
        """Active seed ids in activation order."""
        with self._lock:
            seen = set()
            out = []
            for op, sid in self.events:
                if op == "activate" and sid not in seen:
                    seen.add(sid)
                    out.append(sid)
            for sid, status in self._status.items():
                if status.state is SeedState.ACTIVE and sid not in seen:
                    seen.add(sid)
                    out.append(sid)
            return out

    # -- crashes

    def put_crash(self, content: bytes, parent: str | None, outcome: str,
                  discovered_at: int, origin: str) -> tuple[str, bool]:
        """Store a crash/hang input, deduplicated by content hash."""
        crash_id = seed_id_for(content)
        rec = CrashRecord(crash_id, content, parent, outcome,
                          discovered_at, origin)
        with self._lock:
            if crash_id in self._crashes:
                return crash_id, False
            self._crashes[crash_id] = rec
            self.events.append(("crash", crash_id))
            if self._wal:
                msg = protocol.PutCrash(
                    content=content, parent=parent or "", outcome=outcome,
                    discovered_at=discovered_at, origin=origin,
                )
                self._wal.append(WAL_CRASH, protocol.encode(msg))
            return crash_id, True

    def crashes(self) -> list[CrashRecord]:
        with self._lock:
            return list(self._crashes.values())

    def stats(self) -> dict[str, int]:
        with self._lock:
            states = {s: 0 for s in SeedState}
            for status in self._status.values():
                states[status.state] += 1
            crash_count = sum(1 for c in self._crashes.values()
                              if c.outcome == "crash")
            hang_count = len(self._crashes) - crash_count
            return {
                "seeds": len(self._seeds),
                "pending": states[SeedState.PENDING_EVALUATION],
                "active": states[SeedState.ACTIVE],
                "discarded": states[SeedState.DISCARDED],
                "crashes": crash_count,
                "hangs": hang_count,
            }

    def close(self):
        if self._wal:
            self._wal.close()


def replay_log(path: str, audit: bool = True) -> StoreCore:
    """Rebuild a StoreCore from a write-ahead log file."""
    store = StoreCore(audit=audit)
    for tag, payload in WriteAheadLog.read(path):
        msg, _ = protocol.decode(payload)
        if tag == WAL_SEED:
            status = FuzzStatus(
                depth=msg.depth, handicap=msg.handicap,
                bitmap_size=msg.bitmap_size, exec_time_us=msg.exec_time_us,
                fuzz_count=msg.fuzz_count, favored=bool(msg.favored),
                state=SeedState(msg.state),
            )
            store.put_seed(msg.content, msg.parent or None, msg.discovered_at,
                           msg.origin, status)
        elif tag == WAL_ACTIVATE:
            store.activate_seed(msg.seed_id, msg.bitmap_size, msg.exec_time_us)
        elif tag == WAL_DISCARD:
            store.discard_seed(msg.seed_id)
        elif tag == WAL_STATUS:
            with store._lock:
                status = store._status[msg.seed_id]
                status.fuzz_count = msg.fuzz_count
                status.favored = bool(msg.favored)
        elif tag == WAL_CRASH:
            store.put_crash(msg.content, msg.parent or None, msg.outcome,
                            msg.discovered_at, msg.origin)
        else:
            raise StoreError(f"unknown log tag {tag}")
    return store
