"""Deterministic virtual-time campaign simulation.

Every worker owns a virtual clock; a global event loop always steps the
worker whose clock is furthest behind.  Store and scheduler calls go
through port objects that charge each request-response round trip at
twice the configured one-way latency; fire-and-forget notifications
(update signals, status reports, crash uploads, status writes) cost the
sender nothing.  The scheduler and store themselves are not simulated as
timed nodes: their handlers run inline, which mirrors a deployment where
the main node is never the bottleneck.
"""

from __future__ import annotations

import heapq

from . import protocol
from .report import CampaignReport
from .rng import Rng, derive_seed
from .scheduler import SchedulerCore
from .seedstore import FuzzStatus, LocalCache, SeedState, StoreCore
from .targets import resolve_target
from .worker import ClockState, NodeRole, VirtualClock, WorkerCore

EVAL_BATCH_MAX = 64
EVAL_IDLE_WAIT_US = 10_000
#: consecutive empty pending polls before an evaluator reports idle
EVAL_IDLE_POLLS = 2


class SimStorePort:
    """Store access for one simulated worker: direct core calls plus a
    read-through seed cache and latency accounting."""

    def __init__(self, core: StoreCore, clock: VirtualClock, latency_us: int):
        self.core = core
        self.clock = clock
        self.latency_us = latency_us
        self.cache = LocalCache()
        self.messages = 0

    def _round_trip(self) -> None:
        self.messages += 1
        self.clock.advance(2 * self.latency_us)

    def _one_way(self) -> None:
        self.messages += 1

    def get_seed(self, seed_id: str):
        cached = self.cache.get(seed_id)
        if cached is not None:
            return cached
        self._round_trip()
        seed = self.core.get_seed(seed_id)
        self.cache.put(seed)
        return seed

    def get_status(self, seed_id: str):
        self._round_trip()
        return self.core.get_status(seed_id)

    def update_status(self, seed_id: str, fuzz_count_delta: int = 0,
                      favored: bool | None = None):
        self._one_way()
        return self.core.update_status(seed_id, fuzz_count_delta, favored)

    def put_seed(self, content, parent, discovered_at, origin, status):
        self._round_trip()
        return self.core.put_seed(content, parent, discovered_at, origin,
                                  status)

    def put_crash(self, content, parent, outcome, discovered_at, origin):
        self._one_way()
        return self.core.put_crash(content, parent, outcome, discovered_at,
                                   origin)

    def pop_pending(self, max_ids: int):
        self._round_trip()
        return self.core.pop_pending(max_ids)

    def discard_seed(self, seed_id: str):
        self._one_way()
        return self.core.discard_seed(seed_id)

    def activate_seed(self, seed_id: str, bitmap_size: int, exec_time_us: int):
        self._round_trip()
        return self.core.activate_seed(seed_id, bitmap_size, exec_time_us)

    def active_ids(self):
        self._round_trip()
        return self.core.active_ids()


class DirectStorePort(SimStorePort):
    """Zero-latency store access for the scheduler-local evaluator."""

    def __init__(self, core: StoreCore, clock: VirtualClock):
        super().__init__(core, clock, latency_us=0)


class SimSchedPort:
    """Scheduler access for one simulated worker.  One-way notifications
    are free; the task request is the only round trip."""

    def __init__(self, campaign: "SimCampaign", worker_id: str,
                 clock: VirtualClock, latency_us: int):
        self.campaign = campaign
        self.worker_id = worker_id
        self.clock = clock
        self.latency_us = latency_us

    def request_task(self):
        self.clock.advance(2 * self.latency_us)
        directives = self.campaign.core.handle_request(
            protocol.RequestTask(worker_id=self.worker_id))
        return self.campaign.execute(directives, reply_to=self.worker_id)

    def update_signal(self, seed_id: str) -> None:
        directives = self.campaign.core.on_update_signal(
            protocol.UpdateSignal(seed_id=seed_id))
        self.campaign.execute(directives)

    def seed_activated(self, **kw) -> None:
        self.campaign.core.on_seed_activated(protocol.SeedActivated(**kw))

    def seed_discarded(self, seed_id: str) -> None:
        self.campaign.core.on_seed_discarded(
            protocol.SeedDiscarded(seed_id=seed_id))

    def status_report(self, counters: dict) -> None:
        self.campaign.core.on_status_report(
            protocol.StatusReport(worker_id=self.worker_id,
                                  counters=dict(counters)))

    def eval_idle(self) -> None:
        directives = self.campaign.core.on_eval_idle(
            protocol.EvalIdle(worker_id=self.worker_id))
        self.campaign.execute(directives)


class _LocalEvalSched:
    """Scheduler hookup for the fallback evaluator that runs on the main
    node itself: outcomes feed the core directly, and its timing feeds the
    evaluation-speed average without registering a worker."""

    def __init__(self, core: SchedulerCore):
        self.core = core

    def seed_activated(self, **kw) -> None:
        self.core.on_seed_activated(protocol.SeedActivated(**kw))

    def seed_discarded(self, seed_id: str) -> None:
        self.core.on_seed_discarded(protocol.SeedDiscarded(seed_id=seed_id))

    def status_report(self, counters: dict) -> None:
        evaluated = counters.get("eval_batch_count", 0)
        duration = counters.get("eval_batch_us", 0)
        if evaluated:
            self.core.ctrl.observe_batch(evaluated, duration)

    def update_signal(self, seed_id: str) -> None:
        raise AssertionError("local evaluator never fuzzes")

    def eval_idle(self) -> None:
        pass


class SimWorker:
    def __init__(self, core: WorkerCore, store_port: SimStorePort,
                 sched_port: SimSchedPort):
        self.core = core
        self.store_port = store_port
        self.sched_port = sched_port
        self.pending_role: NodeRole | None = None
        self.empty_polls = 0
        self.done = False


class SimCampaign:
    def __init__(self, cfg):
        self.cfg = cfg
        self.target = resolve_target(cfg.target_spec)
        self.store = StoreCore(audit=cfg.audit,
                               wal_path=getattr(cfg, "wal_path", None))
        self.core = SchedulerCore(threshold=cfg.threshold,
                                  min_eval_nodes=cfg.min_eval_nodes,
                                  eval_cap_divisor=cfg.eval_cap_divisor)
        self.workers: list[SimWorker] = []
        self.by_id: dict[str, SimWorker] = {}
        self._pending_reply = None
        self.path_series: list[tuple[int, int]] = []
        self._sched_clock = VirtualClock()
        self._local_eval = WorkerCore(
            worker_id="_scheduler", target=resolve_target(cfg.target_spec),
            store=DirectStorePort(self.store, self._sched_clock),
            sched=_LocalEvalSched(self.core),
            rng=Rng(derive_seed(cfg.master_seed, "local-eval")),
            clock=self._sched_clock, keep_new_bucket=cfg.keep_new_bucket,
        )
        self._in_local_eval = False

        speeds = list(cfg.worker_speeds or [])
        for i in range(cfg.workers):
            wid = f"w{i}"
            clock = VirtualClock()
            store_port = SimStorePort(self.store, clock, cfg.latency_us)
            sched_port = SimSchedPort(self, wid, clock, cfg.latency_us)
            speed = speeds[i] if i < len(speeds) else 1.0
            core = WorkerCore(
                worker_id=wid, target=resolve_target(cfg.target_spec),
                store=store_port, sched=sched_port,
                rng=Rng(derive_seed(cfg.master_seed, "worker", wid)),
                clock=clock, speed=speed,
                keep_new_bucket=cfg.keep_new_bucket,
            )
            self.core.register_worker(wid)
            worker = SimWorker(core, store_port, sched_port)
            self.workers.append(worker)
            self.by_id[wid] = worker

        self._seed_corpus()

    def _seed_corpus(self) -> None:
        """Load initial seeds as Active and measure them on the main node
        so the queue starts populated."""
        for i, content in enumerate(self.cfg.corpus):
            res = self.target.execute(content)
            from .coverage import count_edges
            status = FuzzStatus(
                depth=0, handicap=0, bitmap_size=count_edges(res.coverage),
                exec_time_us=res.exec_time_us, state=SeedState.ACTIVE,
            )
            seed_id, created = self.store.put_seed(content, None, i, "corpus",
                                                   status)
            if created:
                self.core.update_queue(seed_id, status, len(content), i,
                                       tuple(sorted(res.coverage.edges())))
                self._local_eval.eval_merged.add(seed_id)
                from .coverage import merge_and_detect
                merge_and_detect(self._local_eval.eval_cum, res.coverage)
        self._note_paths(0)

    # -- directive execution

    def execute(self, directives: list, reply_to: str | None = None):
        reply = None
        for directive in directives:
            if directive[0] == "local_eval":
                self._run_local_eval()
                continue
            _, wid, msg = directive
            if isinstance(msg, protocol.SetRole):
                role = (NodeRole.EVALUATING
                        if msg.role == protocol.ROLE_EVALUATING
                        else NodeRole.FUZZING)
                self.by_id[wid].pending_role = role
            elif wid == reply_to:
                reply = msg
            else:
                raise AssertionError(
                    f"unexpected directive {msg} for {wid}")
        return reply

    def _run_local_eval(self) -> None:
        if self._in_local_eval:
            return
        self._in_local_eval = True
        try:
            while True:
                ids = self.store.pop_pending(EVAL_BATCH_MAX)
                if not ids:
                    break
                self._local_eval.evaluate_batch(ids)
        finally:
            self._in_local_eval = False

    # -- event loop

    def _note_paths(self, t_us: int) -> None:
        count = len(self.core.entries)
        if not self.path_series or self.path_series[-1][1] != count:
            self.path_series.append((t_us, count))

    def total_execs(self) -> int:
        return sum(w.core.totals.execs for w in self.workers)

    def _budget_reached(self) -> bool:
        if self.cfg.budget_execs and self.total_execs() >= self.cfg.budget_execs:
            return True
        return False

    def _step(self, worker: SimWorker) -> None:
        core = worker.core
        if worker.pending_role is not None:
            core.role = worker.pending_role
            worker.pending_role = None
        if core.role is NodeRole.FUZZING:
            self._step_fuzz(worker)
        else:
            self._step_eval(worker)

    def _step_fuzz(self, worker: SimWorker) -> None:
        core = worker.core
        core.segments.set_state(ClockState.NON_FUZZING)
        reply = worker.sched_port.request_task()
        if isinstance(reply, protocol.TaskAssignment):
            core.fuzz_one(reply.seed_id, reply.energy)
            worker.sched_port.status_report({"execs": core.totals.execs})
        elif isinstance(reply, protocol.NoTaskAvailable):
            core.clock.advance(reply.retry_after_ms * 1000)
        else:
            raise AssertionError(f"unexpected task reply {reply}")

    def _step_eval(self, worker: SimWorker) -> None:
        core = worker.core
        core.segments.set_state(ClockState.NON_FUZZING)
        ids = worker.store_port.pop_pending(EVAL_BATCH_MAX)
        if ids:
            worker.empty_polls = 0
            core.evaluate_batch(ids)
            return
        worker.empty_polls += 1
        core.clock.advance(EVAL_IDLE_WAIT_US)
        if worker.empty_polls >= EVAL_IDLE_POLLS:
            worker.empty_polls = 0
            worker.sched_port.eval_idle()

    def run(self) -> CampaignReport:
        budget_us = (int(self.cfg.budget_seconds * 1e6)
                     if self.cfg.budget_seconds else None)
        heap: list[tuple[int, int, int]] = []
        seq = 0
        for i, worker in enumerate(self.workers):
            heapq.heappush(heap, (worker.core.clock.now_us(), seq, i))
            seq += 1
        while heap:
            if self._budget_reached():
                break
            _, _, idx = heapq.heappop(heap)
            worker = self.workers[idx]
            if budget_us is not None and worker.core.clock.now_us() >= budget_us:
                worker.done = True
                continue
            paths_before = len(self.core.entries)
            self._step(worker)
            if len(self.core.entries) != paths_before:
                self._note_paths(worker.core.clock.now_us())
            heapq.heappush(heap, (worker.core.clock.now_us(), seq, idx))
            seq += 1
        return self._report()

    def _report(self) -> CampaignReport:
        workers = []
        for worker in self.workers:
            metrics = worker.core.metrics()
            metrics["store_messages"] = worker.store_port.messages
            metrics["cache_hits"] = worker.store_port.cache.hits
            metrics["cache_misses"] = worker.store_port.cache.misses
            workers.append(metrics)
        stats = self.store.stats()
        totals = {
            "execs": self.total_execs(),
            "dry_runs": sum(w.core.totals.dry_runs for w in self.workers),
            "new_seeds": sum(w.core.totals.new_seeds for w in self.workers),
            "doubling_events": sum(w.core.totals.doubling_events
                                   for w in self.workers),
            "paths": stats["active"],
            "pending": stats["pending"],
            "discarded": stats["discarded"],
            "crashes": stats["crashes"],
            "hangs": stats["hangs"],
            "wall_time_us": max((w.core.clock.now_us()
                                 for w in self.workers), default=0),
            "scheduler_eval_execs": self._local_eval.eval_execs,
        }
        crashes = [{"id": c.id, "outcome": c.outcome, "parent": c.parent or "",
                    "origin": c.origin, "length": len(c.content)}
                   for c in self.store.crashes()]
        task_log = []
        if getattr(self.cfg, "record_tasks", False):
            for worker in self.workers:
                for rec in worker.core.task_log:
                    task_log.append({
                        "worker": worker.core.worker_id,
                        "seed_id": rec.seed_id, "energy": rec.energy,
                        "execs": rec.execs,
                        "doubling_events": rec.doubling_events,
                        "discoveries": list(rec.discoveries),
                    })
        report = CampaignReport(
            mode="simulated", target=self.cfg.target_spec,
            config=self.cfg.as_dict(), workers=workers, totals=totals,
            path_series=list(self.path_series), crashes=crashes,
            task_log=task_log,
        )
        self.store.close()
        return report


def run_simulated(cfg) -> CampaignReport:
    return SimCampaign(cfg).run()
