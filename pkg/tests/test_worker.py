"""Worker node behavior: energy accounting, doubling, crash handling,
evaluation batches, and clock segment bookkeeping."""

from fuzzgrid.coverage import CoverageMap, classify_hits
from fuzzgrid.rng import Rng, derive_seed
from fuzzgrid.seedstore import FuzzStatus, SeedState, StoreCore
from fuzzgrid.simulate import DirectStorePort
from fuzzgrid.targets import ExecResult, Outcome
from fuzzgrid.worker import (ClockState, SegmentRecorder, VirtualClock,
                             WorkerCore)


class RecordingSched:
    """Scheduler port stub that records every call."""

    def __init__(self):
        self.signals = []
        self.activated = []
        self.discarded = []
        self.reports = []

    def update_signal(self, seed_id):
        self.signals.append(seed_id)

    def seed_activated(self, **kw):
        self.activated.append(kw)

    def seed_discarded(self, seed_id):
        self.discarded.append(seed_id)

    def status_report(self, counters):
        self.reports.append(dict(counters))

    def eval_idle(self):
        pass


class ConstantTarget:
    """Every input covers the same single edge."""

    map_size = 65536

    def __init__(self, exec_us=100):
        self.exec_us = exec_us
        self.calls = 0

    def execute(self, data):
        self.calls += 1
        return ExecResult(Outcome.OK, classify_hits({0: 1}), self.exec_us)


class NoveltyTarget:
    """Every execution lights up a fresh edge, forcing constant doubling."""

    map_size = 65536

    def __init__(self):
        self.n = 0

    def execute(self, data):
        self.n += 1
        return ExecResult(Outcome.OK, classify_hits({self.n % 60000: 1}), 50)


class CrashOnFF:
    """Crashes whenever the first byte is 0xFF, otherwise constant."""

    map_size = 65536

    def execute(self, data):
        if data and data[0] == 0xFF:
            return ExecResult(Outcome.CRASH, classify_hits({7: 1, 9: 1}), 80)
        return ExecResult(Outcome.OK, classify_hits({0: 1}), 80)


class TableTarget:
    """Coverage looked up by exact input bytes."""

    map_size = 65536

    def __init__(self, table, default=((0,), Outcome.OK)):
        self.table = dict(table)
        self.default = default

    def execute(self, data):
        edges, outcome = self.table.get(bytes(data), self.default)
        return ExecResult(outcome, classify_hits({e: 1 for e in edges}), 120)


def make_worker(target, store=None, seed=1):
    store = store if store is not None else StoreCore()
    clock = VirtualClock()
    port = DirectStorePort(store, clock)
    sched = RecordingSched()
    core = WorkerCore(worker_id="w0", target=target, store=port, sched=sched,
                      rng=Rng(derive_seed(seed, "worker", "w0")), clock=clock)
    return core, store, sched


def put_active(store, content, discovered_at=0):
    status = FuzzStatus(depth=0, bitmap_size=1, exec_time_us=100,
                        state=SeedState.ACTIVE)
    sid, created = store.put_seed(content, None, discovered_at, "corpus",
                                  status)
    assert created
    return sid


def test_no_novelty_runs_exactly_energy_execs():
    core, store, sched = make_worker(ConstantTarget())
    sid = put_active(store, b"AAAA")
    counters = core.fuzz_one(sid, 16)
    assert counters.execs == 16
    assert counters.dry_runs == 1
    assert counters.new_seeds == 0
    assert counters.doubling_events == 0
    assert store.get_status(sid).fuzz_count == 1


def test_dry_run_happens_once_per_seed():
    core, store, sched = make_worker(ConstantTarget())
    sid = put_active(store, b"AAAA")
    first = core.fuzz_one(sid, 8)
    second = core.fuzz_one(sid, 8)
    assert first.dry_runs == 1
    assert second.dry_runs == 0
    assert store.get_status(sid).fuzz_count == 2


def test_doubling_reaches_cap_and_counts_events():
    core, store, sched = make_worker(NoveltyTarget())
    sid = put_active(store, b"seed-bytes")
    counters = core.fuzz_one(sid, 4)
    # budget path: 4 -> 8 -> 16 -> 32 -> 64 -> 128 -> 256 -> 400 (cap 100x)
    assert counters.execs == 400
    assert counters.doubling_events == 7
    assert counters.new_seeds >= 1
    assert sched.signals  # discoveries were announced upstream


def test_discoveries_are_uploaded_pending_with_parent_depth_plus_one():
    core, store, sched = make_worker(NoveltyTarget())
    sid = put_active(store, b"seed-bytes")
    core.fuzz_one(sid, 2)
    child = sched.signals[0]
    assert store.get_status(child).state is SeedState.PENDING_EVALUATION
    assert store.get_status(child).depth == 1
    assert store.get_seed(child).parent == sid


def test_crash_is_recorded_and_task_continues():
    core, store, sched = make_worker(CrashOnFF())
    sid = put_active(store, b"\x00\x00")
    counters = core.fuzz_one(sid, 64)
    assert counters.execs == 64
    assert counters.crashes >= 1
    assert len(store.crashes()) >= 1
    assert store.crashes()[0].parent == sid
    # crash coverage never merges: the crash-only edges stay unknown locally
    assert 7 not in core.local_coverage.edges()
    assert 9 not in core.local_coverage.edges()


def test_crash_content_never_becomes_a_seed():
    core, store, sched = make_worker(CrashOnFF())
    sid = put_active(store, b"\x00\x00")
    core.fuzz_one(sid, 64)
    assert store.stats()["pending"] == 0
    assert sched.signals == []


def test_eval_batch_keeps_novel_discards_duplicate_and_files_crash():
    novel = b"novel-input"
    dup = b"duplicate-input"
    bad = b"crashing-input"
    target = TableTarget({
        novel: ((0, 5), Outcome.OK),
        dup: ((0,), Outcome.OK),
        bad: ((0, 6), Outcome.CRASH),
    })
    core, store, sched = make_worker(target)
    parent = put_active(store, b"\x00" * 4, discovered_at=0)
    status = FuzzStatus(depth=1, state=SeedState.PENDING_EVALUATION)
    ids = []
    for content in (novel, dup, bad):
        sid, _ = store.put_seed(content, parent, 10, "w1", status.copy())
        ids.append(sid)
    report = core.evaluate_batch(store.pop_pending(10))
    assert report.activated == [ids[0]]
    assert report.discarded == [ids[1]]
    assert report.crashed == [ids[2]]
    assert store.get_status(ids[0]).state is SeedState.ACTIVE
    assert store.stats()["crashes"] == 1
    assert sched.activated[0]["seed_id"] == ids[0]
    assert sched.activated[0]["depth"] == 1
    assert 5 in sched.activated[0]["edges"]
    assert sched.discarded == [ids[1], ids[2]]
    assert sched.reports[-1]["eval_batch_count"] == 3


def test_eval_context_refresh_absorbs_foreign_activations():
    """Seeds activated by other evaluators fold into this node's context
    before it judges its own batch."""
    blocker = b"covers-edge-5"
    candidate = b"also-edge-5"
    target = TableTarget({
        blocker: ((0, 5), Outcome.OK),
        candidate: ((0, 5), Outcome.OK),
    })
    core, store, sched = make_worker(target)
    put_active(store, blocker)
    status = FuzzStatus(depth=1, state=SeedState.PENDING_EVALUATION)
    sid, _ = store.put_seed(candidate, None, 3, "w1", status)
    report = core.evaluate_batch(store.pop_pending(10))
    assert report.activated == []
    assert report.discarded == [sid]
    assert core.eval_execs == 2  # one reconstruction plus one candidate


def test_keep_new_bucket_mode_accepts_hit_count_changes():
    heavy = b"\x01" * 8
    target = TableTarget({heavy: ((0,), Outcome.OK)})
    # the pending seed hits edge 0 three times versus once in context
    real_execute = target.execute

    def execute(data):
        if bytes(data) == heavy:
            return ExecResult(Outcome.OK, classify_hits({0: 3}), 120)
        return real_execute(data)

    target.execute = execute
    core, store, sched = make_worker(target)
    core.keep_new_bucket = True
    put_active(store, b"light")
    status = FuzzStatus(depth=1, state=SeedState.PENDING_EVALUATION)
    sid, _ = store.put_seed(heavy, None, 2, "w1", status)
    report = core.evaluate_batch(store.pop_pending(10))
    assert report.activated == [sid]


def test_segment_recorder_partitions_time():
    clock = VirtualClock()
    rec = SegmentRecorder(clock)
    rec.set_state(ClockState.NON_FUZZING)
    clock.advance(100)
    rec.set_state(ClockState.FUZZING)
    clock.advance(300)
    rec.set_state(ClockState.NON_FUZZING)
    clock.advance(50)
    rec.finish()
    assert rec.total_us(ClockState.FUZZING) == 300
    assert rec.total_us(ClockState.NON_FUZZING) == 150
    spans = [(s, e) for _, s, e in rec.segments]
    for (_, end), (start, _) in zip(spans, spans[1:]):
        assert end == start  # contiguous, no gaps or overlap


def test_metrics_accumulate_over_tasks():
    core, store, sched = make_worker(ConstantTarget())
    sid = put_active(store, b"AAAA")
    core.fuzz_one(sid, 16)
    core.fuzz_one(sid, 16)
    m = core.metrics()
    assert m["execs"] == 32
    assert m["tasks"] == 2
    assert m["fuzzing_time_us"] > 0
    assert m["non_fuzzing_time_us"] >= 0


def test_worker_speed_scales_virtual_cost():
    slow_core, store, _ = make_worker(ConstantTarget(exec_us=100))
    sid = put_active(store, b"AAAA")
    slow_core.fuzz_one(sid, 10)
    slow_elapsed = slow_core.clock.now_us()

    fast_store = StoreCore()
    clock = VirtualClock()
    fast_core = WorkerCore(worker_id="w1", target=ConstantTarget(exec_us=100),
                           store=DirectStorePort(fast_store, clock),
                           sched=RecordingSched(),
                           rng=Rng(derive_seed(1, "worker", "w1")),
                           clock=clock, speed=4.0)
    fast_sid = put_active(fast_store, b"AAAA")
    fast_core.fuzz_one(fast_sid, 10)
    assert fast_core.clock.now_us() * 4 == slow_elapsed


def test_task_log_records_each_dispatch():
    core, store, sched = make_worker(ConstantTarget())
    sid = put_active(store, b"AAAA")
    core.fuzz_one(sid, 16)
    core.fuzz_one(sid, 24)
    assert [(r.seed_id, r.energy, r.execs) for r in core.task_log] == [
        (sid, 16, 16), (sid, 24, 24)]
