"""Wire format tests: framing, round trips, malformed input."""

import struct

import pytest
from hypothesis import given, strategies as st

from fuzzgrid import protocol
from fuzzgrid.protocol import (Ack, ActivateSeed, ActiveIds, ActiveList,
                               ErrorReply, EvalBatch, EvalBatchRequest,
                               EvalIdle, FrameDecoder, GetSeed, GetStatus,
                               NeedMoreData, NoTaskAvailable, PendingIds,
                               PopPending, ProtocolError, PutCrash, PutSeed,
                               PutSeedReply, RequestTask, SeedActivated,
                               SeedData, SeedDiscarded, SetRole, Shutdown,
                               StatsQuery, StatsValue, StatusReport,
                               StatusValue, TaskAssignment, UpdateSignal,
                               UpdateStatus, decode, encode)

SAMPLES = [
    RequestTask(worker_id="w0"),
    TaskAssignment(seed_id="ab" * 32, energy=100),
    NoTaskAvailable(retry_after_ms=100),
    UpdateSignal(seed_id="cd" * 32),
    SetRole(role=protocol.ROLE_EVALUATING),
    EvalBatchRequest(worker_id="w1", max=64),
    EvalBatch(seed_ids=["aa", "bb"]),
    StatusReport(worker_id="w2", counters={"execs": 12345, "hangs": 0}),
    Shutdown(),
    SeedActivated(seed_id="ee" * 32, length=10, exec_time_us=1234,
                  bitmap_size=7, depth=2, handicap=1, discovered_at=999,
                  edges=[0, 5, 65535]),
    SeedDiscarded(seed_id="ff" * 32),
    EvalIdle(worker_id="w3"),
    PutSeed(content=b"\x00\xffdata", parent="", discovered_at=1,
            origin="w0", depth=0, handicap=0, bitmap_size=3,
            exec_time_us=400, fuzz_count=0, favored=0, state=0),
    PutSeedReply(seed_id="11" * 32, created=1),
    GetSeed(seed_id="22" * 32),
    SeedData(seed_id="33" * 32, content=b"bytes", parent="44" * 32,
             discovered_at=5, origin="w1"),
    UpdateStatus(seed_id="55" * 32, fuzz_count_delta=1, set_favored=0),
    StatusValue(seed_id="66" * 32, depth=1, handicap=2, bitmap_size=3,
                exec_time_us=4, fuzz_count=5, favored=1, state=1),
    PopPending(max=8),
    PendingIds(seed_ids=[]),
    protocol.DiscardSeed(seed_id="77" * 32),
    Ack(),
    PutCrash(content=b"\xba\xad", parent="", outcome="crash",
             discovered_at=9, origin="w2"),
    ActivateSeed(seed_id="88" * 32, bitmap_size=4, exec_time_us=500),
    ActiveList(),
    ActiveIds(seed_ids=["x", "y", "z"]),
    ErrorReply(code="not_found", detail="missing"),
    StatsQuery(),
    StatsValue(counters={"seeds": 10, "pending": 2}),
    GetStatus(seed_id="99" * 32),
]


@pytest.mark.parametrize("msg", SAMPLES, ids=lambda m: type(m).__name__)
def test_round_trip_every_message(msg):
    buf = encode(msg)
    out, used = decode(buf)
    assert out == msg
    assert used == len(buf)


def test_shutdown_is_five_bytes():
    assert len(encode(Shutdown())) == 5
    assert encode(Shutdown()) == b"\x00\x00\x00\x01" + bytes([Shutdown.TAG])


def test_frame_layout_length_covers_tag_and_payload():
    buf = encode(RequestTask(worker_id="abc"))
    (length,) = struct.unpack(">I", buf[:4])
    assert length == len(buf) - 4
    assert buf[4] == RequestTask.TAG


def test_trailing_bytes_not_consumed():
    buf = encode(Ack()) + b"extra"
    msg, used = decode(buf)
    assert isinstance(msg, Ack)
    assert buf[used:] == b"extra"


def test_truncated_frame_needs_more_data():
    buf = encode(StatusReport(worker_id="w", counters={"a": 1}))
    for cut in range(len(buf)):
        with pytest.raises(NeedMoreData):
            decode(buf[:cut])


def test_unknown_tag_rejected():
    with pytest.raises(ProtocolError):
        decode(b"\x00\x00\x00\x01\xfe")


def test_empty_frame_rejected():
    with pytest.raises(ProtocolError):
        decode(b"\x00\x00\x00\x00")


def test_oversized_length_rejected():
    with pytest.raises(ProtocolError):
        decode(struct.pack(">I", protocol.MAX_FRAME_LEN + 1) + b"\x01")


def test_payload_with_trailing_garbage_rejected():
    good = encode(Ack())
    bad = struct.pack(">I", 3) + bytes([Ack.TAG]) + b"xx"
    assert decode(good)
    with pytest.raises(ProtocolError):
        decode(bad)


def test_validation_energy_and_role():
    with pytest.raises(ProtocolError):
        encode(TaskAssignment(seed_id="x", energy=0))
    with pytest.raises(ProtocolError):
        encode(SetRole(role=7))
    with pytest.raises(ProtocolError):
        encode(EvalBatch(seed_ids=[]))
    with pytest.raises(ProtocolError):
        encode(RequestTask(worker_id=""))
    with pytest.raises(ProtocolError):
        encode(PutCrash(content=b"", parent="", outcome="boom",
                        discovered_at=0, origin="w"))


def test_unsigned_field_range_checked():
    with pytest.raises(ProtocolError):
        encode(NoTaskAvailable(retry_after_ms=1 << 32))
    with pytest.raises(ProtocolError):
        encode(NoTaskAvailable(retry_after_ms=-1))


def test_counters_round_trip_sorted_and_exact():
    msg = StatusReport(worker_id="w", counters={"z": 1, "a": 2**63})
    out, _ = decode(encode(msg))
    assert out.counters == {"z": 1, "a": 2**63}


def test_frame_decoder_reassembles_byte_at_a_time():
    stream = b"".join(encode(m) for m in SAMPLES)
    decoder = FrameDecoder()
    got = []
    for i in range(len(stream)):
        got.extend(decoder.feed(stream[i : i + 1]))
    assert got == SAMPLES
    assert decoder.pending_bytes() == 0


def test_frame_decoder_arbitrary_chunks():
    import random
    stream = b"".join(encode(m) for m in SAMPLES) * 3
    rng = random.Random(7)
    decoder = FrameDecoder()
    got = []
    pos = 0
    while pos < len(stream):
        step = rng.randint(1, 97)
        got.extend(decoder.feed(stream[pos : pos + step]))
        pos += step
    assert got == SAMPLES * 3


@given(st.text(max_size=64), st.binary(max_size=256),
       st.integers(min_value=0, max_value=2**64 - 1))
def test_round_trip_generated_fields(text, blob, big):
    msg = PutSeed(content=blob, parent=text, discovered_at=big, origin=text,
                  depth=big % 2**32, handicap=0, bitmap_size=1,
                  exec_time_us=big, fuzz_count=0, favored=1, state=2)
    out, _ = decode(encode(msg))
    assert out == msg


@given(st.lists(st.integers(min_value=0, max_value=2**32 - 1), max_size=50))
def test_round_trip_edge_lists(edges):
    msg = SeedActivated(seed_id="s", length=1, exec_time_us=1, bitmap_size=1,
                        depth=0, handicap=0, discovered_at=0, edges=edges)
    out, _ = decode(encode(msg))
    assert out.edges == edges
