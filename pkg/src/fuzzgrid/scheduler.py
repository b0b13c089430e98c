"""The main node: prioritized seed queue, FIFO task dispatch with energy
assignment, and dynamic expansion/shrinking of the evaluator pool.

The core is transport-agnostic: handlers mutate scheduler state and
return directives (messages to send, local-evaluation triggers) that the
hosting event loop executes.  Seed status arrives as pushed messages;
the scheduler never issues blocking store queries.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from . import protocol
from .protocol import (NoTaskAvailable, SetRole, TaskAssignment,
                       ROLE_EVALUATING, ROLE_FUZZING)
from .seedstore import FuzzStatus, SeedState

BASE_ENERGY = 100
ENERGY_MIN = 16
ENERGY_MAX = 25600
RETRY_AFTER_MS = 100

DEFAULT_UPDATE_THRESHOLD = 1000
DEFAULT_MIN_EVAL_NODES = 2
DEFAULT_EVAL_CAP_DIVISOR = 2

#: Half-life, in evaluated seeds, of the evaluation-speed moving average.
EVAL_SPEED_HALFLIFE = 30

#: Every Nth dispatch comes from the normal ring (when non-empty), so
#: non-favored seeds progress instead of starving behind the favored ring.
NORMAL_DISPATCH_PERIOD = 16


def speed_factor(exec_time_us: int, avg_exec_us: float) -> float:
    """Faster-than-average seeds earn more energy."""
    if avg_exec_us <= 0:
        return 1.0
    ratio = exec_time_us / avg_exec_us
    if ratio <= 0.25:
        return 3.0
    if ratio <= 0.5:
        return 2.0
    if ratio <= 1.0:
        return 1.0
    if ratio <= 2.0:
        return 0.5
    if ratio <= 4.0:
        return 0.25
    return 0.1


def coverage_factor(bitmap_size: int, avg_bitmap: float) -> float:
    if avg_bitmap <= 0:
        return 1.0
    ratio = bitmap_size / avg_bitmap
    if ratio <= 0.25:
        return 0.25
    if ratio <= 0.5:
        return 0.5
    if ratio <= 1.0:
        return 1.0
    if ratio <= 2.0:
        return 2.0
    return 3.0


def handicap_factor(handicap: int) -> float:
    if handicap >= 4:
        return 4.0
    if handicap >= 2:
        return 2.0
    return 1.0


def depth_factor(depth: int) -> float:
    if depth <= 3:
        return 1.0
    if depth <= 7:
        return 2.0
    if depth <= 13:
        return 3.0
    if depth <= 25:
        return 4.0
    return 5.0


def perform_score(status: FuzzStatus, avg_exec_us: float,
                  avg_bitmap: float) -> int:
    """Energy for one task: BASE * speed * coverage * handicap * depth,
    clamped to [ENERGY_MIN, ENERGY_MAX].  Empty-queue aggregates fall back
    to factor 1 (bootstrap)."""
    energy = BASE_ENERGY
    energy *= speed_factor(status.exec_time_us, avg_exec_us)
    energy *= coverage_factor(status.bitmap_size, avg_bitmap)
    energy *= handicap_factor(status.handicap)
    energy *= depth_factor(status.depth)
    return max(ENERGY_MIN, min(ENERGY_MAX, round(energy)))


def eval_node_target(pending: int, evaluate_speed: float,
                     total_evaluated: int, unique_count: int,
                     floor: int = DEFAULT_MIN_EVAL_NODES,
                     cap_divisor: int = DEFAULT_EVAL_CAP_DIVISOR) -> int:
    """Evaluator count wanted by the expansion rule: enough nodes to drain
    the pending queue in about a second, capped by half the observed
    duplicate ratio, floored at two."""
    if evaluate_speed <= 0:
        evaluate_speed = 1.0
    n = math.ceil(pending / evaluate_speed)
    unique_rate = total_evaluated / max(unique_count, 1)
    cap = math.floor(unique_rate / cap_divisor)
    if n > unique_rate / cap_divisor:
        n = cap
    if n <= floor:
        n = floor
    return n


@dataclass
class EvalControl:
    updates_since_adjust: int = 0
    evaluate_speed: float = 1.0
    total_evaluated: int = 0
    unique_count: int = 0
    current_eval_nodes: set[str] = field(default_factory=set)

    def observe_batch(self, evaluated: int, duration_us: int) -> None:
        """Fold one evaluation batch into the speed moving average."""
        if evaluated <= 0 or duration_us <= 0:
            return
        rate = evaluated / (duration_us / 1e6)
        alpha = 1.0 - 0.5 ** (evaluated / EVAL_SPEED_HALFLIFE)
        self.evaluate_speed += alpha * (rate - self.evaluate_speed)


@dataclass
class SeedQueueEntry:
    seed_id: str
    status: FuzzStatus
    length: int
    discovered_at: int
    score: int
    favored: bool
    cycle_added: int
    dispatched_once: bool = False


@dataclass
class WorkerInfo:
    worker_id: str
    role: int = ROLE_FUZZING
    execs: int = 0
    counters: dict = field(default_factory=dict)


class SchedulerCore:
    """State machine of the main node.

    Handlers return directives for the hosting loop:
      ("send", worker_id, message)  -- deliver on that worker's connection
      ("local_eval",)               -- run one scheduler-local eval batch
    """

    def __init__(self, threshold: int = DEFAULT_UPDATE_THRESHOLD,
                 min_eval_nodes: int = DEFAULT_MIN_EVAL_NODES,
                 eval_cap_divisor: int = DEFAULT_EVAL_CAP_DIVISOR):
        self.threshold = threshold
        self.min_eval_nodes = min_eval_nodes
        self.eval_cap_divisor = eval_cap_divisor
        self.workers: dict[str, WorkerInfo] = {}
        self.entries: dict[str, SeedQueueEntry] = {}
        self.favored_ring: deque[str] = deque()
        self.normal_ring: deque[str] = deque()
        self.request_queue: deque[str] = deque()
        self.ctrl = EvalControl()
        self.pending_estimate = 0
        # aggregates over Active seeds
        self.sum_exec_us = 0
        self.sum_bitmap = 0
        # top-rated bookkeeping: edge -> holder, holder -> edges it tops
        self.top_holder: dict[int, str] = {}
        self.holder_edges: dict[str, set[int]] = {}
        self.fav_keys: dict[str, tuple] = {}
        self.seed_edges: dict[str, tuple[int, ...]] = {}
        # queue-cycle accounting for handicap
        self.queue_cycle = 0
        self.dispatches_in_cycle = 0
        self.total_dispatches = 0
        self.update_signals = 0

    # -- registration and reports

    def register_worker(self, worker_id: str) -> WorkerInfo:
        info = self.workers.get(worker_id)
        if info is None:
            info = WorkerInfo(worker_id)
            self.workers[worker_id] = info
        return info

    def on_status_report(self, msg: protocol.StatusReport) -> list:
        info = self.register_worker(msg.worker_id)
        info.counters.update(msg.counters)
        info.execs = msg.counters.get("execs", info.execs)
        evaluated = msg.counters.get("eval_batch_count", 0)
        duration = msg.counters.get("eval_batch_us", 0)
        if evaluated:
            self.ctrl.observe_batch(evaluated, duration)
        return []

    # -- seed queue

    def _avg_exec(self) -> float:
        n = len(self.entries)
        return self.sum_exec_us / n if n else 0.0

    def _avg_bitmap(self) -> float:
        n = len(self.entries)
        return self.sum_bitmap / n if n else 0.0

    def _sort_key(self, entry: SeedQueueEntry):
        return (-entry.score, entry.discovered_at, entry.seed_id)

    def _ring_insert(self, ring: deque, entry: SeedQueueEntry) -> None:
        key = self._sort_key(entry)
        for i, sid in enumerate(ring):
            if key < self._sort_key(self.entries[sid]):
                ring.insert(i, entry.seed_id)
                return
        ring.append(entry.seed_id)

    def _ring_of(self, entry: SeedQueueEntry) -> deque:
        return self.favored_ring if entry.favored else self.normal_ring

    def _set_favored(self, entry: SeedQueueEntry, favored: bool) -> None:
        if entry.favored == favored:
            return
        old = self._ring_of(entry)
        try:
            old.remove(entry.seed_id)
        except ValueError:
            pass
        entry.favored = favored
        entry.status.favored = favored
        self._ring_insert(self._ring_of(entry), entry)

    def _update_top_rated(self, entry: SeedQueueEntry,
                          edges: tuple[int, ...]) -> None:
        """Top-rated scheme: a seed is favored while it is the minimal
        exec_time x size holder for at least one edge it covers."""
        sid = entry.seed_id
        key = (entry.status.exec_time_us * max(entry.length, 1),
               entry.discovered_at, sid)
        self.fav_keys[sid] = key
        self.seed_edges[sid] = edges
        won = self.holder_edges.setdefault(sid, set())
        demoted: set[str] = set()
        for edge in edges:
            holder = self.top_holder.get(edge)
            if holder is None or key < self.fav_keys[holder]:
                if holder is not None:
                    self.holder_edges[holder].discard(edge)
                    if not self.holder_edges[holder]:
                        demoted.add(holder)
                self.top_holder[edge] = sid
                won.add(edge)
        for loser in demoted:
            if loser in self.entries and loser != sid:
                self._set_favored(self.entries[loser], False)
        entry.favored = bool(won)
        entry.status.favored = entry.favored

    def update_queue(self, seed_id: str, status: FuzzStatus, length: int,
                     discovered_at: int, edges: tuple[int, ...]) -> None:
        """Insert or reposition an evaluated (Active) seed."""
        if status.state is not SeedState.ACTIVE:
            raise ValueError("only Active seeds enter the queue")
        if seed_id in self.entries:
            return
        entry = SeedQueueEntry(
            seed_id=seed_id, status=status.copy(), length=length,
            discovered_at=discovered_at, score=0, favored=False,
            cycle_added=self.queue_cycle,
        )
        self.entries[seed_id] = entry
        self.sum_exec_us += status.exec_time_us
        self.sum_bitmap += status.bitmap_size
        self._update_top_rated(entry, edges)
        entry.score = perform_score(entry.status, self._avg_exec(),
                                    self._avg_bitmap())
        self._ring_insert(self._ring_of(entry), entry)

    def _dispatch_one(self) -> TaskAssignment | None:
        use_normal = not self.favored_ring or (
            self.normal_ring
            and self.total_dispatches % NORMAL_DISPATCH_PERIOD
            == NORMAL_DISPATCH_PERIOD - 1)
        ring = self.normal_ring if use_normal else self.favored_ring
        if not ring:
            return None
        seed_id = ring.popleft()
        ring.append(seed_id)
        entry = self.entries[seed_id]
        if not entry.dispatched_once:
            entry.dispatched_once = True
            entry.status.handicap = self.queue_cycle - entry.cycle_added
        energy = perform_score(entry.status, self._avg_exec(),
                               self._avg_bitmap())
        entry.status.fuzz_count += 1
        entry.score = energy
        self.total_dispatches += 1
        self.dispatches_in_cycle += 1
        if self.dispatches_in_cycle >= len(self.entries):
            self.queue_cycle += 1
            self.dispatches_in_cycle = 0
        return TaskAssignment(seed_id=seed_id, energy=energy)

    def handle_request(self, msg: protocol.RequestTask) -> list:
        worker_id = msg.worker_id
        self.register_worker(worker_id)
        if worker_id not in self.request_queue:
            self.request_queue.append(worker_id)
        directives = []
        while self.request_queue:
            task = self._dispatch_one()
            requester = self.request_queue.popleft()
            if task is None:
                directives.append(
                    ("send", requester,
                     NoTaskAvailable(retry_after_ms=RETRY_AFTER_MS)))
            else:
                directives.append(("send", requester, task))
        return directives

    # -- evaluation control

    def on_update_signal(self, msg: protocol.UpdateSignal) -> list:
        self.update_signals += 1
        self.pending_estimate += 1
        self.ctrl.updates_since_adjust += 1
        directives = []
        if not self.ctrl.current_eval_nodes and self.pending_estimate > 0:
            directives.append(("local_eval",))
        if self.ctrl.updates_since_adjust >= self.threshold:
            directives.extend(self.adjust_eval_nodes())
        return directives

    def on_seed_activated(self, msg: protocol.SeedActivated) -> list:
        self.pending_estimate = max(self.pending_estimate - 1, 0)
        self.ctrl.total_evaluated += 1
        self.ctrl.unique_count += 1
        status = FuzzStatus(
            depth=msg.depth, handicap=msg.handicap,
            bitmap_size=msg.bitmap_size, exec_time_us=msg.exec_time_us,
            state=SeedState.ACTIVE,
        )
        self.update_queue(msg.seed_id, status, msg.length,
                          msg.discovered_at, tuple(msg.edges))
        return []

    def on_seed_discarded(self, msg: protocol.SeedDiscarded) -> list:
        self.pending_estimate = max(self.pending_estimate - 1, 0)
        self.ctrl.total_evaluated += 1
        return []

    def on_eval_idle(self, msg: protocol.EvalIdle) -> list:
        wid = msg.worker_id
        if wid in self.ctrl.current_eval_nodes:
            self.ctrl.current_eval_nodes.discard(wid)
            info = self.register_worker(wid)
            info.role = ROLE_FUZZING
            return [("send", wid, SetRole(role=ROLE_FUZZING))]
        return []

    def adjust_eval_nodes(self) -> list:
        """Resize the evaluator pool toward the expansion-rule target,
        never starving fuzzing and never converting more than half of the
        pool (the floor of two still applies in small pools)."""
        self.ctrl.updates_since_adjust = 0
        n = eval_node_target(
            self.pending_estimate, self.ctrl.evaluate_speed,
            self.ctrl.total_evaluated, self.ctrl.unique_count,
            floor=self.min_eval_nodes, cap_divisor=self.eval_cap_divisor,
        )
        total = len(self.workers)
        n = min(n, max(total - 1, 0))
        if total >= 2 * self.min_eval_nodes:
            n = min(n, max(self.min_eval_nodes, total // 2))
        directives = []
        current = self.ctrl.current_eval_nodes
        if n > len(current):
            candidates = sorted(
                (info for info in self.workers.values()
                 if info.role == ROLE_FUZZING),
                key=lambda info: (info.execs, info.worker_id),
            )
            for info in candidates[: n - len(current)]:
                info.role = ROLE_EVALUATING
                current.add(info.worker_id)
                directives.append(
                    ("send", info.worker_id, SetRole(role=ROLE_EVALUATING)))
        elif n < len(current):
            for wid in sorted(current)[: len(current) - n]:
                current.discard(wid)
                info = self.register_worker(wid)
                info.role = ROLE_FUZZING
                directives.append(("send", wid, SetRole(role=ROLE_FUZZING)))
        return directives

    # -- message router (used by the network server and the simulator)

    def handle_message(self, msg) -> list:
        if isinstance(msg, protocol.RequestTask):
            return self.handle_request(msg)
        if isinstance(msg, protocol.UpdateSignal):
            return self.on_update_signal(msg)
        if isinstance(msg, protocol.SeedActivated):
            return self.on_seed_activated(msg)
        if isinstance(msg, protocol.SeedDiscarded):
            return self.on_seed_discarded(msg)
        if isinstance(msg, protocol.EvalIdle):
            return self.on_eval_idle(msg)
        if isinstance(msg, protocol.StatusReport):
            return self.on_status_report(msg)
        raise ValueError(f"scheduler cannot handle {type(msg).__name__}")
