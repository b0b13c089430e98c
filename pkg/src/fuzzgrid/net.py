"""Socket transport: the seed store service, the scheduler service, the
distributed worker loop, and the harness that wires them together with
worker subprocesses.

Latency discipline matches the simulator: task requests and store reads
are round trips; update signals, status reports, crash uploads, and
status writes are fire-and-forget.  All sockets run with TCP_NODELAY so
small frames are not delayed by coalescing.
"""

from __future__ import annotations

import json
import os
import queue
import selectors
import socket
import subprocess
import sys
import threading
import time

from . import protocol
from .coverage import count_edges
from .report import CampaignReport
from .rng import Rng, derive_seed
from .scheduler import SchedulerCore
from .seedstore import (FuzzStatus, LocalCache, NotFound, SeedState,
                        StoreCore, StoreError)
from .targets import resolve_target
from .worker import ClockState, NodeRole, RealClock, WorkerCore

EVAL_BATCH_MAX = 64
EVAL_IDLE_POLLS = 2
EVAL_IDLE_WAIT_S = 0.01
CONNECT_RETRY_S = 0.05
CONNECT_TIMEOUT_S = 10.0


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _connect(addr: tuple[str, int]) -> socket.socket:
    deadline = time.monotonic() + CONNECT_TIMEOUT_S
    while True:
        try:
            sock = socket.create_connection(addr, timeout=CONNECT_TIMEOUT_S)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(CONNECT_RETRY_S)


class _Channel:
    """Blocking framed request/response channel over one socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.decoder = protocol.FrameDecoder()
        self.inbox: list[protocol.Message] = []
        self.sent = 0
        self.received = 0

    def send(self, msg: protocol.Message) -> None:
        self.sock.sendall(protocol.encode(msg))
        self.sent += 1

    def recv(self) -> protocol.Message:
        while not self.inbox:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("peer closed")
            self.inbox.extend(self.decoder.feed(data))
        self.received += 1
        return self.inbox.pop(0)

    def request(self, msg: protocol.Message) -> protocol.Message:
        self.send(msg)
        return self.recv()

    def drain(self) -> list[protocol.Message]:
        """Non-blocking read of any already-delivered messages."""
        self.sock.setblocking(False)
        try:
            while True:
                try:
                    data = self.sock.recv(65536)
                except BlockingIOError:
                    break
                if not data:
                    raise ConnectionError("peer closed")
                self.inbox.extend(self.decoder.feed(data))
        finally:
            self.sock.setblocking(True)
        out = self.inbox
        self.inbox = []
        self.received += len(out)
        return out

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# --- store service ---------------------------------------------------------


class StoreServer:
    """Threaded TCP front end for a StoreCore: one thread per connection,
    single-frame requests, replies only where the vocabulary defines one."""

    def __init__(self, core: StoreCore, host: str = "127.0.0.1",
                 port: int = 0):
        self.core = core
        self._listener = socket.socket()
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(64)
        self.addr = self._listener.getsockname()
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               daemon=True)

    def start(self) -> None:
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            thread = threading.Thread(target=self._serve, args=(conn,),
                                      daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve(self, conn: socket.socket) -> None:
        decoder = protocol.FrameDecoder()
        try:
            while True:
                data = conn.recv(65536)
                if not data:
                    return
                for msg in decoder.feed(data):
                    reply = self._handle(msg)
                    if reply is not None:
                        conn.sendall(protocol.encode(reply))
                    if isinstance(msg, protocol.Shutdown):
                        return
        except (ConnectionError, OSError, protocol.ProtocolError):
            return
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _handle(self, msg) -> protocol.Message | None:
        core = self.core
        try:
            if isinstance(msg, protocol.PutSeed):
                status = FuzzStatus(
                    depth=msg.depth, handicap=msg.handicap,
                    bitmap_size=msg.bitmap_size,
                    exec_time_us=msg.exec_time_us,
                    fuzz_count=msg.fuzz_count, favored=bool(msg.favored),
                    state=SeedState(msg.state),
                )
                seed_id, created = core.put_seed(
                    msg.content, msg.parent or None, msg.discovered_at,
                    msg.origin, status)
                return protocol.PutSeedReply(seed_id=seed_id,
                                             created=int(created))
            if isinstance(msg, protocol.GetSeed):
                seed = core.get_seed(msg.seed_id)
                return protocol.SeedData(
                    seed_id=seed.id, content=seed.content,
                    parent=seed.parent or "",
                    discovered_at=seed.discovered_at, origin=seed.origin)
            if isinstance(msg, protocol.GetStatus):
                status = core.get_status(msg.seed_id)
                return protocol.StatusValue(
                    seed_id=msg.seed_id, depth=status.depth,
                    handicap=status.handicap,
                    bitmap_size=status.bitmap_size,
                    exec_time_us=status.exec_time_us,
                    fuzz_count=status.fuzz_count,
                    favored=int(status.favored), state=status.state.value)
            if isinstance(msg, protocol.UpdateStatus):
                favored = (None if msg.set_favored == 0
                           else msg.set_favored == 2)
                try:
                    core.update_status(msg.seed_id,
                                       fuzz_count_delta=msg.fuzz_count_delta,
                                       favored=favored)
                except NotFound:
                    pass
                return None
            if isinstance(msg, protocol.PopPending):
                return protocol.PendingIds(seed_ids=core.pop_pending(msg.max))
            if isinstance(msg, protocol.ActivateSeed):
                core.activate_seed(msg.seed_id, msg.bitmap_size,
                                   msg.exec_time_us)
                return protocol.Ack()
            if isinstance(msg, protocol.DiscardSeed):
                try:
                    core.discard_seed(msg.seed_id)
                except StoreError:
                    pass
                return None
            if isinstance(msg, protocol.PutCrash):
                core.put_crash(msg.content, msg.parent or None, msg.outcome,
                               msg.discovered_at, msg.origin)
                return None
            if isinstance(msg, protocol.ActiveList):
                return protocol.ActiveIds(seed_ids=core.active_ids())
            if isinstance(msg, protocol.StatsQuery):
                return protocol.StatsValue(counters=core.stats())
            if isinstance(msg, protocol.Shutdown):
                return None
            return protocol.ErrorReply(
                code="bad_request", detail=type(msg).__name__)
        except NotFound as exc:
            return protocol.ErrorReply(code="not_found", detail=str(exc))
        except StoreError as exc:
            return protocol.ErrorReply(code="store_error", detail=str(exc))

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass


class StoreClient:
    """Worker-side store port over a socket, with the read-through seed
    cache.  A cache hit answers locally without any network traffic."""

    def __init__(self, addr: tuple[str, int]):
        self.channel = _Channel(_connect(addr))
        self.cache = LocalCache()

    @property
    def messages(self) -> int:
        return self.channel.sent

    def _expect(self, reply, kind):
        if isinstance(reply, protocol.ErrorReply):
            if reply.code == "not_found":
                raise NotFound(reply.detail)
            raise StoreError(f"{reply.code}: {reply.detail}")
        if not isinstance(reply, kind):
            raise StoreError(f"unexpected reply {type(reply).__name__}")
        return reply

    def get_seed(self, seed_id: str):
        cached = self.cache.get(seed_id)
        if cached is not None:
            return cached
        reply = self._expect(
            self.channel.request(protocol.GetSeed(seed_id=seed_id)),
            protocol.SeedData)
        from .seedstore import Seed
        seed = Seed(reply.seed_id, reply.content, reply.parent or None,
                    reply.discovered_at, reply.origin)
        self.cache.put(seed)
        return seed

    def get_status(self, seed_id: str) -> FuzzStatus:
        reply = self._expect(
            self.channel.request(protocol.GetStatus(seed_id=seed_id)),
            protocol.StatusValue)
        return FuzzStatus(
            depth=reply.depth, handicap=reply.handicap,
            bitmap_size=reply.bitmap_size, exec_time_us=reply.exec_time_us,
            fuzz_count=reply.fuzz_count, favored=bool(reply.favored),
            state=SeedState(reply.state))

    def update_status(self, seed_id: str, fuzz_count_delta: int = 0,
                      favored: bool | None = None) -> None:
        set_favored = 0 if favored is None else (2 if favored else 1)
        self.channel.send(protocol.UpdateStatus(
            seed_id=seed_id, fuzz_count_delta=fuzz_count_delta,
            set_favored=set_favored))

    def put_seed(self, content, parent, discovered_at, origin,
                 status: FuzzStatus) -> tuple[str, bool]:
        reply = self._expect(
            self.channel.request(protocol.PutSeed(
                content=content, parent=parent or "",
                discovered_at=discovered_at, origin=origin,
                depth=status.depth, handicap=status.handicap,
                bitmap_size=status.bitmap_size,
                exec_time_us=status.exec_time_us,
                fuzz_count=status.fuzz_count, favored=int(status.favored),
                state=status.state.value)),
            protocol.PutSeedReply)
        return reply.seed_id, bool(reply.created)

    def put_crash(self, content, parent, outcome, discovered_at,
                  origin) -> None:
        self.channel.send(protocol.PutCrash(
            content=content, parent=parent or "", outcome=outcome,
            discovered_at=discovered_at, origin=origin))

    def pop_pending(self, max_ids: int) -> list[str]:
        reply = self._expect(
            self.channel.request(protocol.PopPending(max=max_ids)),
            protocol.PendingIds)
        return reply.seed_ids

    def discard_seed(self, seed_id: str) -> None:
        self.channel.send(protocol.DiscardSeed(seed_id=seed_id))

    def activate_seed(self, seed_id: str, bitmap_size: int,
                      exec_time_us: int) -> None:
        self._expect(
            self.channel.request(protocol.ActivateSeed(
                seed_id=seed_id, bitmap_size=bitmap_size,
                exec_time_us=exec_time_us)),
            protocol.Ack)

    def active_ids(self) -> list[str]:
        reply = self._expect(
            self.channel.request(protocol.ActiveList()), protocol.ActiveIds)
        return reply.seed_ids

    def stats(self) -> dict:
        reply = self._expect(
            self.channel.request(protocol.StatsQuery()), protocol.StatsValue)
        return dict(reply.counters)

    def close(self) -> None:
        self.channel.close()


# --- scheduler service -----------------------------------------------------


class SchedulerServer:
    """Single-threaded selector loop around a SchedulerCore, plus a side
    thread running the scheduler-local fallback evaluator.

    A connection is associated with a worker id by the first message that
    carries one.  Directives returned by the core are written straight to
    the named worker's connection.
    """

    def __init__(self, core: SchedulerCore, store_addr: tuple[str, int],
                 target_spec: str, master_seed: int,
                 keep_new_bucket: bool = False,
                 host: str = "127.0.0.1", port: int = 0):
        self.core = core
        self.lock = threading.Lock()
        self._listener = socket.socket()
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(64)
        self._listener.setblocking(False)
        self.addr = self._listener.getsockname()
        self._selector = selectors.DefaultSelector()
        self._selector.register(self._listener, selectors.EVENT_READ,
                                ("accept", None))
        self._conn_worker: dict[socket.socket, str] = {}
        self._worker_conn: dict[str, socket.socket] = {}
        self._decoders: dict[socket.socket, protocol.FrameDecoder] = {}
        self._stop = threading.Event()
        self._shut_down = False
        self.path_series: list[tuple[int, int]] = []
        self._started_at = time.perf_counter()
        self.total_worker_execs = 0
        self.budget_execs = 0
        self.on_budget: callable | None = None

        self._eval_queue: queue.Queue = queue.Queue()
        self._local_eval_metrics: dict = {}
        self._eval_thread = threading.Thread(
            target=self._local_eval_loop,
            args=(store_addr, target_spec, master_seed, keep_new_bucket),
            daemon=True)
        self._thread = threading.Thread(target=self._loop, daemon=True)

    # -- lifecycle

    def start(self) -> None:
        self._started_at = time.perf_counter()
        self._note_paths()
        self._eval_thread.start()
        self._thread.start()

    def _now_us(self) -> int:
        return int((time.perf_counter() - self._started_at) * 1e6)

    def _note_paths(self) -> None:
        count = len(self.core.entries)
        if not self.path_series or self.path_series[-1][1] != count:
            self.path_series.append((self._now_us(), count))

    # -- selector loop

    def _loop(self) -> None:
        while not self._stop.is_set():
            events = self._selector.select(timeout=0.1)
            for key, _ in events:
                kind, _ = key.data
                if kind == "accept":
                    self._accept()
                else:
                    self._read(key.fileobj)

    def _accept(self) -> None:
        try:
            conn, _ = self._listener.accept()
        except OSError:
            return
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.setblocking(True)
        self._selector.register(conn, selectors.EVENT_READ, ("conn", None))
        self._decoders[conn] = protocol.FrameDecoder()

    def _drop(self, conn: socket.socket) -> None:
        try:
            self._selector.unregister(conn)
        except (KeyError, ValueError):
            pass
        wid = self._conn_worker.pop(conn, None)
        if wid is not None:
            self._worker_conn.pop(wid, None)
        self._decoders.pop(conn, None)
        try:
            conn.close()
        except OSError:
            pass

    def _read(self, conn: socket.socket) -> None:
        try:
            data = conn.recv(65536)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._drop(conn)
            return
        if not data:
            self._drop(conn)
            return
        try:
            messages = self._decoders[conn].feed(data)
        except protocol.ProtocolError:
            self._drop(conn)
            return
        for msg in messages:
            self._dispatch(conn, msg)

    def _associate(self, conn: socket.socket, worker_id: str) -> None:
        if self._conn_worker.get(conn) != worker_id:
            self._conn_worker[conn] = worker_id
            self._worker_conn[worker_id] = conn

    def _dispatch(self, conn: socket.socket, msg) -> None:
        worker_id = getattr(msg, "worker_id", None)
        if worker_id:
            self._associate(conn, worker_id)
        with self.lock:
            directives = self.core.handle_message(msg)
            if isinstance(msg, protocol.StatusReport):
                self.total_worker_execs = sum(
                    info.execs for info in self.core.workers.values())
            self._execute(directives)
            self._note_paths()
        if (self.budget_execs and self.on_budget is not None
                and self.total_worker_execs >= self.budget_execs):
            callback, self.on_budget = self.on_budget, None
            callback()

    def _execute(self, directives: list) -> None:
        for directive in directives:
            if directive[0] == "local_eval":
                self._eval_queue.put("eval")
                continue
            _, wid, out = directive
            conn = self._worker_conn.get(wid)
            if conn is None:
                continue
            try:
                conn.sendall(protocol.encode(out))
            except OSError:
                self._drop(conn)

    # -- scheduler-local fallback evaluator

    def _local_eval_loop(self, store_addr, target_spec, master_seed,
                         keep_new_bucket) -> None:
        store = StoreClient(store_addr)
        evaluator = WorkerCore(
            worker_id="_scheduler", target=resolve_target(target_spec),
            store=store, sched=_LocalEvalHook(self),
            rng=Rng(derive_seed(master_seed, "local-eval")),
            clock=RealClock(), keep_new_bucket=keep_new_bucket)
        while not self._stop.is_set():
            try:
                self._eval_queue.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                while True:
                    ids = store.pop_pending(EVAL_BATCH_MAX)
                    if not ids:
                        break
                    evaluator.evaluate_batch(ids)
            except (ConnectionError, OSError):
                return
            finally:
                self._local_eval_metrics = evaluator.metrics()
        store.close()

    # -- shutdown

    def broadcast_shutdown(self) -> None:
        with self.lock:
            if self._shut_down:
                return
            self._shut_down = True
            frame = protocol.encode(protocol.Shutdown())
            for conn in list(self._worker_conn.values()):
                try:
                    conn.sendall(frame)
                except OSError:
                    pass

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._eval_thread.join(timeout=2.0)
        for conn in list(self._decoders):
            self._drop(conn)
        try:
            self._listener.close()
        except OSError:
            pass

    def metrics(self) -> dict:
        with self.lock:
            return {
                "paths": len(self.core.entries),
                "dispatches": self.core.total_dispatches,
                "update_signals": self.core.update_signals,
                "eval_nodes": sorted(self.core.ctrl.current_eval_nodes),
                "evaluate_speed": self.core.ctrl.evaluate_speed,
                "local_eval": dict(self._local_eval_metrics),
            }


class _LocalEvalHook:
    """Scheduler port for the fallback evaluator thread: outcomes go
    straight into the core under the server lock, without registering the
    evaluator as a worker."""

    def __init__(self, server: SchedulerServer):
        self.server = server

    def seed_activated(self, **kw) -> None:
        with self.server.lock:
            self.server.core.on_seed_activated(protocol.SeedActivated(**kw))
            self.server._note_paths()

    def seed_discarded(self, seed_id: str) -> None:
        with self.server.lock:
            self.server.core.on_seed_discarded(
                protocol.SeedDiscarded(seed_id=seed_id))

    def status_report(self, counters: dict) -> None:
        evaluated = counters.get("eval_batch_count", 0)
        duration = counters.get("eval_batch_us", 0)
        if evaluated:
            with self.server.lock:
                self.server.core.ctrl.observe_batch(evaluated, duration)

    def update_signal(self, seed_id: str) -> None:
        raise AssertionError("local evaluator never fuzzes")

    def eval_idle(self) -> None:
        pass


# --- worker process --------------------------------------------------------


class SchedChannel:
    """Worker-side scheduler port: one socket carrying both round trips
    (task requests) and pushed messages (role changes, shutdown)."""

    def __init__(self, addr: tuple[str, int], worker_id: str):
        self.channel = _Channel(_connect(addr))
        self.worker_id = worker_id
        self.pending_role: NodeRole | None = None
        self.shutdown = False

    def _absorb(self, msg) -> bool:
        """Stash control messages; returns True when the message was one."""
        if isinstance(msg, protocol.SetRole):
            self.pending_role = (NodeRole.EVALUATING
                                 if msg.role == protocol.ROLE_EVALUATING
                                 else NodeRole.FUZZING)
            return True
        if isinstance(msg, protocol.Shutdown):
            self.shutdown = True
            return True
        return False

    def hello(self) -> None:
        self.channel.send(protocol.StatusReport(worker_id=self.worker_id,
                                                counters={}))

    def poll_control(self) -> None:
        try:
            for msg in self.channel.drain():
                if not self._absorb(msg):
                    raise ConnectionError(
                        f"unsolicited {type(msg).__name__}")
        except ConnectionError:
            self.shutdown = True

    def request_task(self):
        try:
            self.channel.send(protocol.RequestTask(worker_id=self.worker_id))
            while True:
                msg = self.channel.recv()
                if self._absorb(msg):
                    if self.shutdown:
                        return None
                    continue
                return msg
        except ConnectionError:
            self.shutdown = True
            return None

    def _send(self, msg) -> None:
        try:
            self.channel.send(msg)
        except (ConnectionError, OSError):
            self.shutdown = True

    def update_signal(self, seed_id: str) -> None:
        self._send(protocol.UpdateSignal(seed_id=seed_id))

    def seed_activated(self, **kw) -> None:
        self._send(protocol.SeedActivated(**kw))

    def seed_discarded(self, seed_id: str) -> None:
        self._send(protocol.SeedDiscarded(seed_id=seed_id))

    def status_report(self, counters: dict) -> None:
        self._send(protocol.StatusReport(worker_id=self.worker_id,
                                         counters=dict(counters)))

    def eval_idle(self) -> None:
        self._send(protocol.EvalIdle(worker_id=self.worker_id))

    def close(self) -> None:
        self.channel.close()


class PacedTarget:
    """Wraps a target so each execution takes its modeled time on the
    wall clock (synthetic targets otherwise finish in microseconds and
    would make overhead measurements meaningless)."""

    def __init__(self, inner):
        self.inner = inner
        self.map_size = inner.map_size

    def execute(self, data: bytes):
        start = time.perf_counter()
        res = self.inner.execute(data)
        remaining = res.exec_time_us / 1e6 - (time.perf_counter() - start)
        if remaining > 0:
            time.sleep(remaining)
        return res


def run_worker(worker_id: str, store_addr: tuple[str, int],
               sched_addr: tuple[str, int], target_spec: str,
               master_seed: int, metrics_path: str | None = None,
               pace: bool = True, keep_new_bucket: bool = False) -> dict:
    """Worker main loop: fuzz or evaluate until the scheduler says stop."""
    target = resolve_target(target_spec)
    if pace:
        target = PacedTarget(target)
    store = StoreClient(store_addr)
    sched = SchedChannel(sched_addr, worker_id)
    sched.hello()
    core = WorkerCore(
        worker_id=worker_id, target=target, store=store, sched=sched,
        rng=Rng(derive_seed(master_seed, "worker", worker_id)),
        clock=RealClock(), keep_new_bucket=keep_new_bucket)
    empty_polls = 0
    try:
        while not sched.shutdown:
            if sched.pending_role is not None:
                core.role = sched.pending_role
                sched.pending_role = None
            if core.role is NodeRole.FUZZING:
                core.segments.set_state(ClockState.NON_FUZZING)
                reply = sched.request_task()
                if reply is None:
                    break
                if isinstance(reply, protocol.TaskAssignment):
                    core.fuzz_one(reply.seed_id, reply.energy)
                    sched.status_report({"execs": core.totals.execs})
                elif isinstance(reply, protocol.NoTaskAvailable):
                    time.sleep(reply.retry_after_ms / 1000)
                else:
                    raise ConnectionError(
                        f"unexpected task reply {type(reply).__name__}")
            else:
                core.segments.set_state(ClockState.NON_FUZZING)
                ids = store.pop_pending(EVAL_BATCH_MAX)
                if ids:
                    empty_polls = 0
                    core.evaluate_batch(ids)
                else:
                    empty_polls += 1
                    time.sleep(EVAL_IDLE_WAIT_S)
                    if empty_polls >= EVAL_IDLE_POLLS:
                        empty_polls = 0
                        sched.eval_idle()
                sched.poll_control()
    except (ConnectionError, OSError):
        pass
    metrics = core.metrics()
    metrics["store_messages"] = store.messages
    metrics["cache_hits"] = store.cache.hits
    metrics["cache_misses"] = store.cache.misses
    if metrics_path:
        with open(metrics_path, "w") as fh:
            json.dump(metrics, fh, sort_keys=True)
    sched.close()
    store.close()
    return metrics


# --- distributed harness ---------------------------------------------------


def _seed_corpus(store: StoreCore, sched: SchedulerCore, target_spec: str,
                 corpus: list[bytes]) -> None:
    target = resolve_target(target_spec)
    for i, content in enumerate(corpus):
        res = target.execute(content)
        status = FuzzStatus(
            depth=0, handicap=0, bitmap_size=count_edges(res.coverage),
            exec_time_us=res.exec_time_us, state=SeedState.ACTIVE)
        seed_id, created = store.put_seed(content, None, i, "corpus", status)
        if created:
            sched.update_queue(seed_id, status, len(content), i,
                               tuple(sorted(res.coverage.edges())))


def run_distributed(cfg) -> CampaignReport:
    """Run a campaign with in-process store/scheduler services and one
    subprocess per worker node."""
    out_dir = cfg.out_dir or os.path.join(
        os.getcwd(), f"fuzzgrid-dist-{os.getpid()}")
    os.makedirs(out_dir, exist_ok=True)

    store_core = StoreCore(audit=cfg.audit, wal_path=cfg.wal_path)
    store_server = StoreServer(store_core)
    store_server.start()
    sched_core = SchedulerCore(threshold=cfg.threshold,
                               min_eval_nodes=cfg.min_eval_nodes,
                               eval_cap_divisor=cfg.eval_cap_divisor)
    _seed_corpus(store_core, sched_core, cfg.target_spec, cfg.corpus)
    sched_server = SchedulerServer(
        sched_core, store_server.addr, cfg.target_spec, cfg.master_seed,
        keep_new_bucket=cfg.keep_new_bucket)
    sched_server.budget_execs = cfg.budget_execs
    done = threading.Event()
    sched_server.on_budget = done.set
    sched_server.start()

    procs = []
    metric_paths = []
    worker_ids = [f"w{i}" for i in range(cfg.workers)]
    for wid in worker_ids:
        metrics_path = os.path.join(out_dir, f"worker-{wid}.json")
        metric_paths.append(metrics_path)
        argv = [
            sys.executable, "-m", "fuzzgrid.cli", "worker",
            "--id", wid,
            "--store", f"{store_server.addr[0]}:{store_server.addr[1]}",
            "--sched", f"{sched_server.addr[0]}:{sched_server.addr[1]}",
            "--target", cfg.target_spec,
            "--master-seed", str(cfg.master_seed),
            "--metrics", metrics_path,
        ]
        if cfg.keep_new_bucket:
            argv.append("--keep-new-bucket")
        procs.append(subprocess.Popen(argv))

    started = time.monotonic()
    try:
        if cfg.budget_seconds:
            done.wait(timeout=cfg.budget_seconds)
        else:
            done.wait()
    finally:
        sched_server.broadcast_shutdown()
        deadline = time.monotonic() + 15.0
        for proc in procs:
            try:
                proc.wait(timeout=max(deadline - time.monotonic(), 0.1))
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        wall_us = int((time.monotonic() - started) * 1e6)
        sched_server.stop()
        store_server.stop()

    workers = []
    for wid, path in zip(worker_ids, metric_paths):
        if os.path.exists(path):
            with open(path) as fh:
                workers.append(json.load(fh))
        else:
            workers.append({"worker_id": wid, "error": "no metrics written"})

    stats = store_core.stats()
    totals = {
        "execs": sum(w.get("execs", 0) for w in workers),
        "dry_runs": sum(w.get("dry_runs", 0) for w in workers),
        "new_seeds": sum(w.get("new_seeds", 0) for w in workers),
        "doubling_events": sum(w.get("doubling_events", 0) for w in workers),
        "paths": stats["active"],
        "pending": stats["pending"],
        "discarded": stats["discarded"],
        "crashes": stats["crashes"],
        "hangs": stats["hangs"],
        "wall_time_us": wall_us,
    }
    sched_metrics = sched_server.metrics()
    totals["scheduler_eval_execs"] = sched_metrics["local_eval"].get(
        "eval_execs", 0)
    with open(os.path.join(out_dir, "scheduler.json"), "w") as fh:
        json.dump(sched_metrics, fh, sort_keys=True, default=str)
    crashes = [{"id": c.id, "outcome": c.outcome, "parent": c.parent or "",
                "origin": c.origin, "length": len(c.content)}
               for c in store_core.crashes()]
    store_core.close()
    return CampaignReport(
        mode="distributed", target=cfg.target_spec, config=cfg.as_dict(),
        workers=workers, totals=totals,
        path_series=list(sched_server.path_series), crashes=crashes)
