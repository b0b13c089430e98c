"""Execution contract over programs under test.

Two kinds of target: in-process deterministic synthetic targets with
documented edge graphs (reproducible experiments), and external command
line programs invoked with a ``@@`` input-file placeholder (real use).
"""

from __future__ import annotations

import enum
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field

from .coverage import MAP_SIZE, CoverageMap, classify_counts, classify_hits

DEFAULT_TIMEOUT_MS = 1000

#: Environment overrides honoured by resolve_target.
ENV_TIMEOUT_MS = "FUZZGRID_TIMEOUT_MS"
ENV_MAP_SIZE = "FUZZGRID_MAP_SIZE"
#: Path a cooperating external harness writes raw edge counters to.
ENV_COVERAGE_OUT = "FUZZGRID_COV_OUT"


class TargetError(RuntimeError):
    """Infrastructure failure (missing binary, spawn error) -- distinct
    from a Crash outcome of the program under test."""


class Outcome(enum.Enum):
    OK = "ok"
    CRASH = "crash"
    HANG = "hang"


@dataclass
class ExecResult:
    outcome: Outcome
    coverage: CoverageMap
    exec_time_us: int


@dataclass
class TargetHandle:
    """Resolvable description of a program under test."""

    spec: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    map_size: int = MAP_SIZE

    def resolve(self):
        return resolve_target(self.spec, self.timeout_ms, self.map_size)


class SyntheticTarget:
    """In-process target: a pure function of the input bytes.

    Subclasses implement ``hits(data)`` returning (edge->count, outcome)
    and declare their full reachable edge set in ``declared_edges``.
    Execution time follows a linear cost model so simulated campaigns have
    deterministic timing.
    """

    name = "synthetic"
    declared_edges: frozenset[int] = frozenset()

    def __init__(self, map_size: int = MAP_SIZE,
                 cost_base_us: int = 400, cost_per_byte_us: int = 2):
        self.map_size = map_size
        self.cost_base_us = cost_base_us
        self.cost_per_byte_us = cost_per_byte_us

    def hits(self, data: bytes) -> tuple[dict[int, int], Outcome]:
        raise NotImplementedError

    def cost_us(self, data: bytes) -> int:
        return self.cost_base_us + self.cost_per_byte_us * len(data)

    def execute(self, data: bytes) -> ExecResult:
        raw, outcome = self.hits(data)
        return ExecResult(outcome, classify_hits(raw, self.map_size), self.cost_us(data))


def _ladder_key(rungs: int) -> bytes:
    return bytes((i * 37 + 11) & 0xFF for i in range(rungs))


class ByteLadder(SyntheticTarget):
    """Each correct prefix byte unlocks one edge.

    Edge 0 is the unconditional entry edge; rung i (0-based) contributes
    edge 1+i when the first i+1 input bytes match the ladder key.
    """

    name = "byte-ladder"

    def __init__(self, rungs: int = 16, **kw):
        super().__init__(**kw)
        self.rungs = rungs
        self.key = _ladder_key(rungs)
        self.declared_edges = frozenset([0]) | frozenset(range(1, rungs + 1))

    def hits(self, data):
        raw = {0: 1}
        for i in range(min(len(data), self.rungs)):
            if data[i] != self.key[i]:
                break
            raw[1 + i] = 1
        return raw, Outcome.OK


MAGIC_GATES = (b"MGC0", b"MGC1", b"MGC2", b"MGC3")


class MagicBranches(SyntheticTarget):
    """Independent 4-byte gates: gate i fires when bytes [4i, 4i+4) equal
    its magic constant, contributing edge 16+i.  Entry edge is 0."""

    name = "magic-branches"

    def __init__(self, gates: int = 4, **kw):
        super().__init__(**kw)
        self.gates = [MAGIC_GATES[i % len(MAGIC_GATES)] for i in range(gates)]
        self.declared_edges = frozenset([0]) | frozenset(16 + i for i in range(gates))

    def hits(self, data):
        raw = {0: 1}
        for i, magic in enumerate(self.gates):
            if data[4 * i : 4 * i + 4] == magic:
                raw[16 + i] = 1
        return raw, Outcome.OK


class WideFanout(SyntheticTarget):
    """Hundreds of shallow edges keyed on the first 2-byte window.

    Distinct inputs sharing the leading 2-byte window produce identical
    coverage, which is what stresses deduplication.  The edges are spread
    across the whole map so region-partitioned baselines split evenly.
    """

    name = "wide-fanout"

    def __init__(self, n_edges: int = 400, **kw):
        super().__init__(**kw)
        self.n_edges = n_edges
        self.stride = max((self.map_size - 2) // n_edges, 1)
        self.declared_edges = frozenset([0]) | frozenset(
            1 + i * self.stride for i in range(n_edges)
        )

    def hits(self, data):
        raw = {0: 1}
        if len(data) >= 2:
            idx = ((data[0] << 8) | data[1]) % self.n_edges
            raw[1 + idx * self.stride] = 1
        return raw, Outcome.OK


CRASH_TOKEN = b"\xba\xad"
HANG_TOKEN = b"\xee\x77"


class CrashPocket(SyntheticTarget):
    """Mostly-flat target with a rare crash token (and a hang token, so
    both abnormal outcomes are reachable deterministically)."""

    name = "crash-pocket"

    def __init__(self, **kw):
        super().__init__(**kw)
        self.declared_edges = frozenset([0, 1, 2, 3])

    def hits(self, data):
        raw = {0: 1}
        if len(data) >= 2:
            raw[1] = 1
        if CRASH_TOKEN in data:
            raw[2] = 1
            return raw, Outcome.CRASH
        if HANG_TOKEN in data:
            raw[3] = 1
            return raw, Outcome.HANG
        return raw, Outcome.OK


class LadderBranches(SyntheticTarget):
    """Byte ladder plus per-position probe branches.

    Besides the ladder edges, every inspected position i records a probe
    edge keyed on the high nibble of the byte tried there (edge
    64 + 16*i + nibble), so mutation keeps uncovering edges throughout a
    campaign.  Used for the energy-doubling experiments.
    """

    name = "ladder-branches"

    def __init__(self, rungs: int = 16, **kw):
        super().__init__(**kw)
        self.rungs = rungs
        self.key = _ladder_key(rungs)
        probes = frozenset(
            64 + 16 * i + n for i in range(rungs) for n in range(16)
        )
        self.declared_edges = frozenset([0]) | frozenset(range(1, rungs + 1)) | probes

    def hits(self, data):
        raw = {0: 1}
        for i in range(min(len(data), self.rungs)):
            raw[64 + 16 * i + (data[i] >> 4)] = 1
        for i in range(min(len(data), self.rungs)):
            if data[i] != self.key[i]:
                break
            raw[1 + i] = 1
        return raw, Outcome.OK


class ExternalTarget:
    """Command-line program receiving input via a temporary file
    substituted for the ``@@`` placeholder.

    Coverage requires a cooperating harness that dumps raw edge counters
    (map_size bytes) to the path passed in ``FUZZGRID_COV_OUT``; without
    one the target runs coverage-blind (empty maps).
    """

    name = "external"

    def __init__(self, command: str, timeout_ms: int = DEFAULT_TIMEOUT_MS,
                 map_size: int = MAP_SIZE):
        if command.count("@@") != 1:
            raise TargetError("external command needs exactly one @@ placeholder")
        self.command = command
        self.timeout_ms = timeout_ms
        self.map_size = map_size

    def execute(self, data: bytes) -> ExecResult:
        with tempfile.TemporaryDirectory(prefix="fuzzgrid-") as tmp:
            input_path = os.path.join(tmp, "input")
            cov_path = os.path.join(tmp, "coverage")
            with open(input_path, "wb") as fh:
                fh.write(data)
            argv = [input_path if tok == "@@" else tok
                    for tok in shlex.split(self.command)]
            env = dict(os.environ, **{ENV_COVERAGE_OUT: cov_path})
            start = time.perf_counter()
            try:
                proc = subprocess.run(
                    argv, env=env, timeout=self.timeout_ms / 1000.0,
                    stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
                )
            except subprocess.TimeoutExpired:
                elapsed = int((time.perf_counter() - start) * 1e6)
                return ExecResult(Outcome.HANG, self._read_coverage(cov_path),
                                  max(elapsed, self.timeout_ms * 1000))
            except (FileNotFoundError, PermissionError) as exc:
                raise TargetError(f"cannot spawn target: {exc}") from exc
            elapsed = int((time.perf_counter() - start) * 1e6)
            outcome = Outcome.CRASH if proc.returncode < 0 else Outcome.OK
            return ExecResult(outcome, self._read_coverage(cov_path), elapsed)

    def _read_coverage(self, cov_path: str) -> CoverageMap:
        try:
            with open(cov_path, "rb") as fh:
                raw = fh.read()
        except OSError:
            return CoverageMap(self.map_size)
        if len(raw) != self.map_size:
            return CoverageMap(self.map_size)
        return classify_counts(raw, self.map_size)


_SYNTHETIC = {
    "byte-ladder": ByteLadder,
    "magic-branches": MagicBranches,
    "wide-fanout": WideFanout,
    "crash-pocket": CrashPocket,
    "ladder-branches": LadderBranches,
}


def synthetic_suite(map_size: int = MAP_SIZE) -> list[SyntheticTarget]:
    """The built-in synthetic targets with documented edge graphs."""
    return [cls(map_size=map_size) for cls in _SYNTHETIC.values()]


def resolve_target(spec: str, timeout_ms: int | None = None,
                   map_size: int | None = None):
    """Build an executor from a target spec string.

    ``synthetic:<name>[?key=value&...]`` or ``external:<command with @@>``.
    Synthetic params: rungs, gates, edges, cost_base_us, cost_per_byte_us.
    """
    if timeout_ms is None:
        timeout_ms = int(os.environ.get(ENV_TIMEOUT_MS, DEFAULT_TIMEOUT_MS))
    if map_size is None:
        map_size = int(os.environ.get(ENV_MAP_SIZE, MAP_SIZE))
    kind, _, rest = spec.partition(":")
    if kind == "external":
        return ExternalTarget(rest, timeout_ms=timeout_ms, map_size=map_size)
    if kind != "synthetic":
        raise TargetError(f"unknown target kind {kind!r}")
    name, _, query = rest.partition("?")
    if name not in _SYNTHETIC:
        raise TargetError(f"unknown synthetic target {name!r}")
    params: dict[str, int] = {}
    if query:
        for pair in query.split("&"):
            key, _, value = pair.partition("=")
            params[key] = int(value)
    kwargs = {"map_size": map_size}
    for src, dst in (("rungs", "rungs"), ("gates", "gates"), ("edges", "n_edges"),
                     ("cost_base_us", "cost_base_us"),
                     ("cost_per_byte_us", "cost_per_byte_us")):
        if src in params:
            kwargs[dst] = params[src]
    return _SYNTHETIC[name](**kwargs)
