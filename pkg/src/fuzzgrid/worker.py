"""Worker node logic: the fuzzing role (request task, mutate, execute,
upload discoveries, double energy on new paths) and the evaluating role
(two-stage deduplication of pending seeds).

The core is transport-agnostic: it talks to the seed store and the
scheduler through small port objects, and reads time from an injected
clock, so the same code drives both simulated and distributed campaigns.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

from .coverage import CoverageMap, NoveltyKind, count_edges, merge_and_detect
from .mutation import deterministic_mutants, havoc_mutant, splice
from .rng import Rng
from .seedstore import FuzzStatus, SeedState
from .targets import Outcome

#: A single task may at most grow to this multiple of its dispatched energy.
ENERGY_DOUBLING_CAP = 100

#: Havoc/splice split once splice partners exist (1 in 4 picks splice).
SPLICE_NUM, SPLICE_DEN = 1, 4


class NodeRole(enum.Enum):
    FUZZING = "fuzzing"
    EVALUATING = "evaluating"


class ClockState(enum.Enum):
    FUZZING = "fuzzing"
    NON_FUZZING = "non_fuzzing"


class RealClock:
    """Wall-clock microseconds; advancing is a no-op (time passes on its
    own in distributed mode)."""

    def now_us(self) -> int:
        return int(time.perf_counter() * 1e6)

    def advance(self, us: int) -> None:
        pass


class VirtualClock:
    """Simulated clock; only explicit advances move it."""

    def __init__(self, start_us: int = 0):
        self._now = start_us

    def now_us(self) -> int:
        return self._now

    def advance(self, us: int) -> None:
        self._now += max(int(us), 0)

    def jump_to(self, us: int) -> None:
        if us > self._now:
            self._now = us


class SegmentRecorder:
    """Contiguous, non-overlapping (state, start, end) clock segments."""

    def __init__(self, clock):
        self.clock = clock
        self.segments: list[tuple[ClockState, int, int]] = []
        self._state: ClockState | None = None
        self._since = clock.now_us()

    def set_state(self, state: ClockState) -> None:
        now = self.clock.now_us()
        if self._state is not None and now > self._since:
            self.segments.append((self._state, self._since, now))
        if self._state != state:
            self._state = state
        self._since = now

    def finish(self) -> None:
        self.set_state(self._state or ClockState.NON_FUZZING)

    def total_us(self, state: ClockState) -> int:
        return sum(end - start for s, start, end in self.segments if s is state)


@dataclass
class TaskCounters:
    execs: int = 0
    dry_runs: int = 0
    new_seeds: int = 0
    doubling_events: int = 0
    crashes: int = 0
    hangs: int = 0


@dataclass
class EvalReport:
    activated: list[str] = field(default_factory=list)
    discarded: list[str] = field(default_factory=list)
    crashed: list[str] = field(default_factory=list)
    duration_us: int = 0


@dataclass
class TaskRecord:
    """One dispatched task, for report logs and oracle comparisons."""
    seed_id: str
    energy: int
    execs: int
    doubling_events: int
    discoveries: tuple[str, ...]


class WorkerCore:
    """One node: a sequential loop owning a local coverage map, a seed
    cache (inside the store port), and clock segments."""

    def __init__(self, worker_id: str, target, store, sched, rng: Rng,
                 clock=None, speed: float = 1.0, keep_new_bucket: bool = False,
                 map_size: int | None = None):
        self.worker_id = worker_id
        self.target = target
        self.store = store
        self.sched = sched
        self.rng = rng
        self.clock = clock if clock is not None else RealClock()
        self.speed = speed
        self.keep_new_bucket = keep_new_bucket
        self.role = NodeRole.FUZZING
        map_size = map_size if map_size is not None else target.map_size
        self.local_coverage = CoverageMap(map_size)
        self.segments = SegmentRecorder(self.clock)
        self.reconstructed: set[str] = set()
        self.det_done: set[str] = set()
        self.seed_depth: dict[str, int] = {}
        # splice partners: (id, content) in first-seen order
        self.partners: list[tuple[str, bytes]] = []
        self._partner_ids: set[str] = set()
        # evaluator state: cumulative coverage context
        self.eval_cum = CoverageMap(map_size)
        self.eval_merged: set[str] = set()
        self.totals = TaskCounters()
        self.eval_execs = 0
        self.tasks_done = 0
        self.task_log: list[TaskRecord] = []
        self.empty_eval_polls = 0

    # -- helpers

    def _exec(self, data: bytes):
        res = self.target.execute(data)
        self.clock.advance(max(int(res.exec_time_us / self.speed), 1))
        return res

    def _note_partner(self, seed_id: str, content: bytes) -> None:
        if seed_id not in self._partner_ids:
            self._partner_ids.add(seed_id)
            self.partners.append((seed_id, content))

    def _next_mutant(self, seed_content: bytes, det_iter) -> bytes:
        if det_iter is not None:
            mutant = next(det_iter, None)
            if mutant is not None:
                return mutant
        if len(self.partners) >= 2 and self.rng.chance(SPLICE_NUM, SPLICE_DEN):
            _, partner = self.partners[self.rng.below(len(self.partners))]
            return splice(seed_content, partner, self.rng)
        return havoc_mutant(seed_content, self.rng)

    # -- fuzzing role

    def fuzz_one(self, seed_id: str, energy: int) -> TaskCounters:
        """Run one dispatched task; uploads discoveries and crash records
        as they happen, doubling the remaining energy budget on every
        new-path event (capped at 100x the dispatched energy)."""
        counters = TaskCounters()
        self.segments.set_state(ClockState.NON_FUZZING)
        seed = self.store.get_seed(seed_id)
        if seed_id not in self.seed_depth:
            self.seed_depth[seed_id] = self.store.get_status(seed_id).depth
        depth = self.seed_depth[seed_id]
        self._note_partner(seed_id, seed.content)
        self.store.update_status(seed_id, fuzz_count_delta=1)

        self.segments.set_state(ClockState.FUZZING)
        if seed_id not in self.reconstructed:
            res = self._exec(seed.content)
            merge_and_detect(self.local_coverage, res.coverage)
            self.reconstructed.add(seed_id)
            counters.dry_runs += 1

        det_iter = None
        if seed_id not in self.det_done:
            self.det_done.add(seed_id)
            det_iter = deterministic_mutants(seed.content)

        remaining = energy
        cap = energy * ENERGY_DOUBLING_CAP
        executed = 0
        discoveries: list[str] = []
        while executed < remaining:
            data = self._next_mutant(seed.content, det_iter)
            res = self._exec(data)
            executed += 1
            counters.execs += 1
            if res.outcome is not Outcome.OK:
                if res.outcome is Outcome.CRASH:
                    counters.crashes += 1
                else:
                    counters.hangs += 1
                self.segments.set_state(ClockState.NON_FUZZING)
                self.store.put_crash(data, seed_id, res.outcome.value,
                                     self.clock.now_us(), self.worker_id)
                self.segments.set_state(ClockState.FUZZING)
                continue
            novelty = merge_and_detect(self.local_coverage, res.coverage)
            if novelty is NoveltyKind.NEW_EDGE:
                status = FuzzStatus(
                    depth=depth + 1, handicap=0,
                    bitmap_size=count_edges(res.coverage),
                    exec_time_us=res.exec_time_us,
                    state=SeedState.PENDING_EVALUATION,
                )
                self.segments.set_state(ClockState.NON_FUZZING)
                child_id, created = self.store.put_seed(
                    data, seed_id, self.clock.now_us(), self.worker_id, status)
                if created:
                    counters.new_seeds += 1
                    discoveries.append(child_id)
                    self.seed_depth[child_id] = depth + 1
                    self._note_partner(child_id, data)
                    self.sched.update_signal(child_id)
                self.segments.set_state(ClockState.FUZZING)
                new_remaining = min(remaining * 2, cap)
                if new_remaining > remaining:
                    remaining = new_remaining
                    counters.doubling_events += 1

        self.segments.set_state(ClockState.NON_FUZZING)
        self.tasks_done += 1
        self.task_log.append(TaskRecord(seed_id, energy, counters.execs,
                                        counters.doubling_events,
                                        tuple(discoveries)))
        self._fold(counters)
        return counters

    def _fold(self, counters: TaskCounters) -> None:
        self.totals.execs += counters.execs
        self.totals.dry_runs += counters.dry_runs
        self.totals.new_seeds += counters.new_seeds
        self.totals.doubling_events += counters.doubling_events
        self.totals.crashes += counters.crashes
        self.totals.hangs += counters.hangs

    # -- evaluating role

    def _refresh_eval_context(self) -> None:
        """Fold into the cumulative map any Active seed this evaluator has
        not yet reconstructed, so acceptance decisions see the campaign's
        current frontier."""
        for sid in self.store.active_ids():
            if sid in self.eval_merged:
                continue
            seed = self.store.get_seed(sid)
            res = self._exec(seed.content)
            self.eval_execs += 1
            merge_and_detect(self.eval_cum, res.coverage)
            self.eval_merged.add(sid)

    def evaluate_batch(self, ids: list[str]) -> EvalReport:
        """Two-stage dedup: content addressing already collapsed identical
        bytes, so stage one is the store's hash integrity check on fetch;
        stage two reconstructs coverage and keeps only seeds that extend
        the cumulative evaluation map."""
        report = EvalReport()
        self.segments.set_state(ClockState.NON_FUZZING)
        start = self.clock.now_us()
        self._refresh_eval_context()
        for seed_id in ids:
            seed = self.store.get_seed(seed_id)
            res = self._exec(seed.content)
            self.eval_execs += 1
            if res.outcome is not Outcome.OK:
                self.store.put_crash(seed.content, seed.parent or "",
                                     res.outcome.value, self.clock.now_us(),
                                     self.worker_id)
                self.store.discard_seed(seed_id)
                self.sched.seed_discarded(seed_id)
                report.crashed.append(seed_id)
                continue
            novelty = merge_and_detect(self.eval_cum, res.coverage)
            keep = novelty is NoveltyKind.NEW_EDGE or (
                self.keep_new_bucket and novelty is NoveltyKind.NEW_BUCKET)
            if keep:
                bitmap_size = count_edges(res.coverage)
                self.store.activate_seed(seed_id, bitmap_size,
                                         res.exec_time_us)
                prior = self.store.get_status(seed_id)
                self.eval_merged.add(seed_id)
                self.sched.seed_activated(
                    seed_id=seed_id, length=len(seed.content),
                    exec_time_us=res.exec_time_us, bitmap_size=bitmap_size,
                    depth=prior.depth, handicap=prior.handicap,
                    discovered_at=seed.discovered_at,
                    edges=sorted(res.coverage.edges()),
                )
                report.activated.append(seed_id)
            else:
                self.store.discard_seed(seed_id)
                self.sched.seed_discarded(seed_id)
                report.discarded.append(seed_id)
        report.duration_us = max(self.clock.now_us() - start, 1)
        evaluated = len(ids)
        self.sched.status_report({
            "eval_batch_count": evaluated,
            "eval_batch_us": report.duration_us,
            "execs": self.totals.execs,
        })
        return report

    # -- metrics

    def metrics(self) -> dict:
        self.segments.finish()
        return {
            "worker_id": self.worker_id,
            "execs": self.totals.execs,
            "dry_runs": self.totals.dry_runs,
            "new_seeds": self.totals.new_seeds,
            "doubling_events": self.totals.doubling_events,
            "crashes": self.totals.crashes,
            "hangs": self.totals.hangs,
            "eval_execs": self.eval_execs,
            "tasks": self.tasks_done,
            "fuzzing_time_us": self.segments.total_us(ClockState.FUZZING),
            "non_fuzzing_time_us": self.segments.total_us(ClockState.NON_FUZZING),
        }
