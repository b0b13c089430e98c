"""Reference baselines.

``run_baseline_serial`` is a deliberately self-contained single-node
fuzzing loop: one flat function holding the queue, coverage map, and
energy bookkeeping inline, sharing only the mutation/execution/scoring
primitives with the campaign stack.  A one-worker simulated campaign
must reproduce its task log event for event; keeping this loop
independent of the scheduler and worker classes is what makes that
comparison a real check.

``run_static_partition`` models the classic fixed split of the coverage
map across workers, for load-balance comparisons against dynamic
scheduling.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

from .coverage import CoverageMap, NoveltyKind, count_edges, merge_and_detect
from .mutation import deterministic_mutants, havoc_mutant, splice
from .report import CampaignReport
from .rng import Rng, derive_seed
from .scheduler import NORMAL_DISPATCH_PERIOD, perform_score
from .seedstore import FuzzStatus, SeedState, seed_id_for
from .targets import Outcome, resolve_target
from .worker import ENERGY_DOUBLING_CAP, SPLICE_DEN, SPLICE_NUM

STATIC_ENERGY = 100
STATIC_IDLE_WAIT_US = 100_000


@dataclass
class _QueueSeed:
    seed_id: str
    content: bytes
    status: FuzzStatus
    discovered_at: int
    score: int = 0
    favored: bool = False
    cycle_added: int = 0
    dispatched_once: bool = False


def run_baseline_serial(cfg) -> CampaignReport:
    """Single-node loop: prioritized cyclic queue, per-seed energy from
    the performance score, energy doubling on new paths."""
    target = resolve_target(cfg.target_spec)
    rng = Rng(derive_seed(cfg.master_seed, "worker", "w0"))
    clock_us = 0

    seeds: dict[str, _QueueSeed] = {}
    favored_ring: deque[str] = deque()
    normal_ring: deque[str] = deque()
    sum_exec = 0
    sum_bitmap = 0
    queue_cycle = 0
    dispatches_in_cycle = 0
    total_dispatches = 0
    # minimal exec_time x size holder per covered edge
    top_holder: dict[int, str] = {}
    holder_edges: dict[str, set[int]] = {}
    fav_keys: dict[str, tuple] = {}

    local_map = CoverageMap(target.map_size)
    reconstructed: set[str] = set()
    det_done: set[str] = set()
    partners: list[tuple[str, bytes]] = []
    partner_ids: set[str] = set()
    crashes: dict[str, str] = {}

    execs = dry_runs = new_seeds = doubling_total = 0
    crash_count = hang_count = 0
    task_log: list[dict] = []
    path_series: list[tuple[int, int]] = []

    def sort_key(sid: str):
        entry = seeds[sid]
        return (-entry.score, entry.discovered_at, entry.seed_id)

    def ring_insert(ring: deque, sid: str) -> None:
        key = sort_key(sid)
        for i, other in enumerate(ring):
            if key < sort_key(other):
                ring.insert(i, sid)
                return
        ring.append(sid)

    def set_favored(sid: str, value: bool) -> None:
        entry = seeds[sid]
        if entry.favored == value:
            return
        old = favored_ring if entry.favored else normal_ring
        try:
            old.remove(sid)
        except ValueError:
            pass
        entry.favored = value
        entry.status.favored = value
        ring_insert(favored_ring if value else normal_ring, sid)

    def avg_exec() -> float:
        return sum_exec / len(seeds) if seeds else 0.0

    def avg_bitmap() -> float:
        return sum_bitmap / len(seeds) if seeds else 0.0

    def note_partner(sid: str, content: bytes) -> None:
        if sid not in partner_ids:
            partner_ids.add(sid)
            partners.append((sid, content))

    def insert_seed(content: bytes, depth: int, bitmap_size: int,
                    exec_time_us: int, discovered_at: int,
                    edges: tuple[int, ...]) -> str | None:
        nonlocal sum_exec, sum_bitmap
        sid = seed_id_for(content)
        if sid in seeds:
            return None
        status = FuzzStatus(depth=depth, handicap=0, bitmap_size=bitmap_size,
                            exec_time_us=exec_time_us, state=SeedState.ACTIVE)
        entry = _QueueSeed(seed_id=sid, content=content, status=status,
                           discovered_at=discovered_at,
                           cycle_added=queue_cycle)
        seeds[sid] = entry
        sum_exec += exec_time_us
        sum_bitmap += bitmap_size
        key = (exec_time_us * max(len(content), 1), discovered_at, sid)
        fav_keys[sid] = key
        won = holder_edges.setdefault(sid, set())
        demoted: set[str] = set()
        for edge in edges:
            holder = top_holder.get(edge)
            if holder is None or key < fav_keys[holder]:
                if holder is not None:
                    holder_edges[holder].discard(edge)
                    if not holder_edges[holder]:
                        demoted.add(holder)
                top_holder[edge] = sid
                won.add(edge)
        for loser in demoted:
            if loser in seeds and loser != sid:
                set_favored(loser, False)
        entry.favored = bool(won)
        entry.status.favored = entry.favored
        entry.score = perform_score(entry.status, avg_exec(), avg_bitmap())
        ring_insert(favored_ring if entry.favored else normal_ring, sid)
        if not path_series or path_series[-1][1] != len(seeds):
            path_series.append((discovered_at, len(seeds)))
        return sid

    def dispatch() -> tuple[str, int] | None:
        nonlocal queue_cycle, dispatches_in_cycle, total_dispatches
        use_normal = not favored_ring or (
            normal_ring
            and total_dispatches % NORMAL_DISPATCH_PERIOD
            == NORMAL_DISPATCH_PERIOD - 1)
        ring = normal_ring if use_normal else favored_ring
        if not ring:
            return None
        sid = ring.popleft()
        ring.append(sid)
        entry = seeds[sid]
        if not entry.dispatched_once:
            entry.dispatched_once = True
            entry.status.handicap = queue_cycle - entry.cycle_added
        energy = perform_score(entry.status, avg_exec(), avg_bitmap())
        entry.status.fuzz_count += 1
        entry.score = energy
        total_dispatches += 1
        dispatches_in_cycle += 1
        if dispatches_in_cycle >= len(seeds):
            queue_cycle += 1
            dispatches_in_cycle = 0
        return sid, energy

    def run_target(data: bytes):
        nonlocal clock_us
        res = target.execute(data)
        clock_us += max(int(res.exec_time_us), 1)
        return res

    for i, content in enumerate(cfg.corpus):
        res = target.execute(content)
        insert_seed(content, depth=0, bitmap_size=count_edges(res.coverage),
                    exec_time_us=res.exec_time_us, discovered_at=i,
                    edges=tuple(sorted(res.coverage.edges())))
    path_series.clear()
    path_series.append((0, len(seeds)))

    budget = cfg.budget_execs or 0
    budget_us = int(cfg.budget_seconds * 1e6) if cfg.budget_seconds else None
    tasks = 0
    while True:
        if budget and execs >= budget:
            break
        if budget_us is not None and clock_us >= budget_us:
            break
        picked = dispatch()
        if picked is None:
            break
        sid, energy = picked
        entry = seeds[sid]
        note_partner(sid, entry.content)
        if sid not in reconstructed:
            res = run_target(entry.content)
            merge_and_detect(local_map, res.coverage)
            reconstructed.add(sid)
            dry_runs += 1
        det_iter = None
        if sid not in det_done:
            det_done.add(sid)
            det_iter = deterministic_mutants(entry.content)

        remaining = energy
        cap = energy * ENERGY_DOUBLING_CAP
        executed = 0
        doubling = 0
        discoveries: list[str] = []
        while executed < remaining:
            data = None
            if det_iter is not None:
                data = next(det_iter, None)
            if data is None:
                if len(partners) >= 2 and rng.chance(SPLICE_NUM, SPLICE_DEN):
                    _, partner = partners[rng.below(len(partners))]
                    data = splice(entry.content, partner, rng)
                else:
                    data = havoc_mutant(entry.content, rng)
            res = run_target(data)
            executed += 1
            execs += 1
            if res.outcome is not Outcome.OK:
                if res.outcome is Outcome.CRASH:
                    crash_count += 1
                else:
                    hang_count += 1
                crashes.setdefault(seed_id_for(data), res.outcome.value)
                continue
            novelty = merge_and_detect(local_map, res.coverage)
            if novelty is NoveltyKind.NEW_EDGE:
                child = insert_seed(
                    data, depth=entry.status.depth + 1,
                    bitmap_size=count_edges(res.coverage),
                    exec_time_us=res.exec_time_us, discovered_at=clock_us,
                    edges=tuple(sorted(res.coverage.edges())))
                if child is not None:
                    new_seeds += 1
                    discoveries.append(child)
                    note_partner(child, data)
                new_remaining = min(remaining * 2, cap)
                if new_remaining > remaining:
                    remaining = new_remaining
                    doubling += 1
        doubling_total += doubling
        tasks += 1
        task_log.append({
            "worker": "w0", "seed_id": sid, "energy": energy,
            "execs": executed, "doubling_events": doubling,
            "discoveries": discoveries,
        })

    worker_metrics = {
        "worker_id": "w0", "execs": execs, "dry_runs": dry_runs,
        "new_seeds": new_seeds, "doubling_events": doubling_total,
        "crashes": crash_count, "hangs": hang_count, "tasks": tasks,
        "fuzzing_time_us": clock_us, "non_fuzzing_time_us": 0,
    }
    totals = {
        "execs": execs, "dry_runs": dry_runs, "new_seeds": new_seeds,
        "doubling_events": doubling_total, "paths": len(seeds), "pending": 0,
        "discarded": 0,
        "crashes": sum(1 for v in crashes.values() if v == "crash"),
        "hangs": sum(1 for v in crashes.values() if v == "hang"),
        "wall_time_us": clock_us,
    }
    return CampaignReport(
        mode="serial", target=cfg.target_spec, config=cfg.as_dict(),
        workers=[worker_metrics], totals=totals, path_series=path_series,
        crashes=[{"id": cid, "outcome": outcome, "parent": "", "origin": "w0",
                  "length": 0} for cid, outcome in crashes.items()],
        task_log=task_log,
    )


@dataclass
class _StaticWorker:
    index: int
    rng: Rng
    clock_us: int = 0
    fuzz_us: int = 0
    idle_us: int = 0
    cursor: int = 0
    execs: int = 0
    new_seeds: int = 0
    doubling_events: int = 0
    crashes: int = 0
    hangs: int = 0
    tasks: int = 0
    det_done: set = field(default_factory=set)
    partners: list = field(default_factory=list)
    partner_ids: set = field(default_factory=set)


def run_static_partition(cfg) -> CampaignReport:
    """Fixed-split comparison: the coverage map is cut into k contiguous
    regions and each worker only fuzzes seeds whose highest covered edge
    falls in its region.  Discoveries are shared instantly (an optimistic
    model), so any imbalance left over is due to the split itself."""
    target = resolve_target(cfg.target_spec)
    k = cfg.workers
    map_size = target.map_size

    def region(edge: int) -> int:
        return edge * k // map_size

    shared_map = CoverageMap(map_size)
    seed_list: list[tuple[str, bytes, int, int]] = []  # id, content, region, depth
    seen: set[str] = set()
    crashes: dict[str, str] = {}
    path_series: list[tuple[int, int]] = [(0, 0)]

    def add_seed(content: bytes, depth: int, coverage, t_us: int) -> bool:
        sid = seed_id_for(content)
        if sid in seen:
            return False
        seen.add(sid)
        edges = coverage.edges()
        # the entry edge is common to every input, so the highest covered
        # edge is the distinctive one
        dominant = max(edges) if edges else 0
        seed_list.append((sid, content, region(dominant), depth))
        path_series.append((t_us, len(seed_list)))
        return True

    for content in cfg.corpus:
        res = target.execute(content)
        merge_and_detect(shared_map, res.coverage)
        add_seed(content, 0, res.coverage, 0)

    workers = [
        _StaticWorker(index=i,
                      rng=Rng(derive_seed(cfg.master_seed, "static", f"w{i}")))
        for i in range(k)
    ]

    def note_partner(w: _StaticWorker, sid: str, content: bytes) -> None:
        if sid not in w.partner_ids:
            w.partner_ids.add(sid)
            w.partners.append(content)

    def pick_seed(w: _StaticWorker):
        owned = [s for s in seed_list if s[2] == w.index]
        if not owned:
            return None
        seed = owned[w.cursor % len(owned)]
        w.cursor += 1
        return seed

    def total_execs() -> int:
        return sum(w.execs for w in workers)

    budget = cfg.budget_execs or 0
    budget_us = int(cfg.budget_seconds * 1e6) if cfg.budget_seconds else None
    heap = [(w.clock_us, i) for i, w in enumerate(workers)]
    heapq.heapify(heap)
    seq = len(workers)
    while heap:
        if budget and total_execs() >= budget:
            break
        _, idx = heapq.heappop(heap)
        w = workers[idx]
        if budget_us is not None and w.clock_us >= budget_us:
            continue
        seed = pick_seed(w)
        if seed is None:
            w.clock_us += STATIC_IDLE_WAIT_US
            w.idle_us += STATIC_IDLE_WAIT_US
            heapq.heappush(heap, (w.clock_us, idx))
            continue
        sid, content, _, depth = seed
        note_partner(w, sid, content)
        det_iter = None
        if sid not in w.det_done:
            w.det_done.add(sid)
            det_iter = deterministic_mutants(content)
        remaining = STATIC_ENERGY
        cap = STATIC_ENERGY * ENERGY_DOUBLING_CAP
        executed = 0
        while executed < remaining:
            data = None
            if det_iter is not None:
                data = next(det_iter, None)
            if data is None:
                if len(w.partners) >= 2 and w.rng.chance(SPLICE_NUM,
                                                         SPLICE_DEN):
                    partner = w.partners[w.rng.below(len(w.partners))]
                    data = splice(content, partner, w.rng)
                else:
                    data = havoc_mutant(content, w.rng)
            res = target.execute(data)
            cost = max(int(res.exec_time_us), 1)
            w.clock_us += cost
            w.fuzz_us += cost
            executed += 1
            w.execs += 1
            if res.outcome is not Outcome.OK:
                if res.outcome is Outcome.CRASH:
                    w.crashes += 1
                else:
                    w.hangs += 1
                crashes.setdefault(seed_id_for(data), res.outcome.value)
                continue
            novelty = merge_and_detect(shared_map, res.coverage)
            if novelty is NoveltyKind.NEW_EDGE:
                if add_seed(data, depth + 1, res.coverage, w.clock_us):
                    w.new_seeds += 1
                new_remaining = min(remaining * 2, cap)
                if new_remaining > remaining:
                    remaining = new_remaining
                    w.doubling_events += 1
        w.tasks += 1
        heapq.heappush(heap, (w.clock_us, idx))
        seq += 1

    worker_metrics = []
    for w in workers:
        worker_metrics.append({
            "worker_id": f"w{w.index}", "execs": w.execs, "dry_runs": 0,
            "new_seeds": w.new_seeds, "doubling_events": w.doubling_events,
            "crashes": w.crashes, "hangs": w.hangs, "tasks": w.tasks,
            "fuzzing_time_us": w.fuzz_us, "non_fuzzing_time_us": w.idle_us,
        })
    totals = {
        "execs": total_execs(),
        "dry_runs": 0,
        "new_seeds": sum(w.new_seeds for w in workers),
        "doubling_events": sum(w.doubling_events for w in workers),
        "paths": len(seed_list), "pending": 0, "discarded": 0,
        "crashes": sum(1 for v in crashes.values() if v == "crash"),
        "hangs": sum(1 for v in crashes.values() if v == "hang"),
        "wall_time_us": max((w.clock_us for w in workers), default=0),
    }
    return CampaignReport(
        mode="static", target=cfg.target_spec, config=cfg.as_dict(),
        workers=worker_metrics, totals=totals, path_series=path_series,
        crashes=[{"id": cid, "outcome": outcome, "parent": "", "origin": "",
                  "length": 0} for cid, outcome in crashes.items()],
    )
