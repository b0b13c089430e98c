"""Seed store tests: content addressing, queue, state machine, log replay."""

import hashlib

import pytest

from fuzzgrid.seedstore import (FuzzStatus, IntegrityError, InvalidTransition,
                                LocalCache, NotFound, Seed, SeedState,
                                SizeError, StoreCore, StoreError, replay_log,
                                seed_id_for)


def pending_status(**kw):
    return FuzzStatus(state=SeedState.PENDING_EVALUATION, **kw)


def active_status(**kw):
    return FuzzStatus(state=SeedState.ACTIVE, **kw)


def test_seed_id_is_sha256_hex():
    assert seed_id_for(b"abc") == hashlib.sha256(b"abc").hexdigest()
    assert len(seed_id_for(b"")) == 64
    assert seed_id_for(b"x") == seed_id_for(b"x").lower()


def test_put_is_idempotent_on_content():
    store = StoreCore()
    sid1, created1 = store.put_seed(b"data", None, 1, "w0", pending_status())
    sid2, created2 = store.put_seed(b"data", "other", 2, "w1", pending_status())
    assert sid1 == sid2
    assert created1 and not created2
    seed = store.get_seed(sid1)
    assert seed.parent is None and seed.origin == "w0"  # first writer wins


def test_put_rejects_oversized():
    store = StoreCore(max_input_len=4)
    with pytest.raises(SizeError):
        store.put_seed(b"12345", None, 0, "w", pending_status())


def test_pending_queue_fifo_exactly_once():
    store = StoreCore()
    ids = []
    for i in range(5):
        sid, _ = store.put_seed(bytes([i]), None, i, "w", pending_status())
        ids.append(sid)
    assert store.pending_count() == 5
    first = store.pop_pending(2)
    rest = store.pop_pending(10)
    assert first == ids[:2]
    assert rest == ids[2:]
    assert store.pop_pending(1) == []
    # duplicate put does not re-enqueue
    store.put_seed(bytes([0]), None, 9, "w", pending_status())
    assert store.pop_pending(1) == []


def test_pop_pending_validates_max():
    with pytest.raises(StoreError):
        StoreCore().pop_pending(0)


def test_initial_active_seed_bypasses_queue():
    store = StoreCore()
    sid, _ = store.put_seed(b"corpus", None, 0, "corpus", active_status())
    assert store.pending_count() == 0
    assert store.active_ids() == [sid]


def test_state_machine_transitions():
    store = StoreCore()
    sid, _ = store.put_seed(b"s", None, 0, "w", pending_status())
    status = store.activate_seed(sid, bitmap_size=9, exec_time_us=77)
    assert status.state is SeedState.ACTIVE
    assert status.bitmap_size == 9 and status.exec_time_us == 77
    with pytest.raises(InvalidTransition):
        store.activate_seed(sid, 1, 1)
    with pytest.raises(InvalidTransition):
        store.discard_seed(sid)  # Active is terminal


def test_discard_from_pending_only_and_content_dropped():
    store = StoreCore(audit=False)
    sid, _ = store.put_seed(b"junk", None, 0, "w", pending_status())
    store.discard_seed(sid)
    with pytest.raises(NotFound):
        store.get_seed(sid)
    seed = store.get_seed(sid, include_discarded=True)
    assert seed.content is None
    with pytest.raises(InvalidTransition):
        store.discard_seed(sid)


def test_audit_mode_retains_discarded_content():
    store = StoreCore(audit=True)
    sid, _ = store.put_seed(b"keepme", None, 0, "w", pending_status())
    store.discard_seed(sid)
    assert store.get_seed(sid, include_discarded=True).content == b"keepme"


def test_update_status_read_modify_write():
    store = StoreCore()
    sid, _ = store.put_seed(b"s", None, 0, "w", pending_status())
    store.update_status(sid, fuzz_count_delta=3)
    status = store.update_status(sid, fuzz_count_delta=2, favored=True)
    assert status.fuzz_count == 5 and status.favored
    assert store.get_status(sid).fuzz_count == 5
    with pytest.raises(NotFound):
        store.update_status("0" * 64, fuzz_count_delta=1)


def test_get_status_returns_a_copy():
    store = StoreCore()
    sid, _ = store.put_seed(b"s", None, 0, "w", pending_status(depth=4))
    status = store.get_status(sid)
    status.depth = 99
    assert store.get_status(sid).depth == 4


def test_integrity_check_on_fetch():
    store = StoreCore()
    sid, _ = store.put_seed(b"honest", None, 0, "w", pending_status())
    store._seeds[sid] = Seed(sid, b"tampered", None, 0, "w")
    with pytest.raises(IntegrityError):
        store.get_seed(sid)


def test_crash_records_dedup_by_content():
    store = StoreCore()
    cid1, created1 = store.put_crash(b"boom", None, "crash", 1, "w0")
    cid2, created2 = store.put_crash(b"boom", "p", "hang", 2, "w1")
    assert cid1 == cid2 and created1 and not created2
    assert len(store.crashes()) == 1
    with pytest.raises(ValueError):
        store.put_crash(b"x", None, "explode", 0, "w")


def test_stats_counts_states():
    store = StoreCore()
    a, _ = store.put_seed(b"a", None, 0, "w", pending_status())
    store.put_seed(b"b", None, 0, "w", pending_status())
    store.activate_seed(a, 1, 1)
    store.put_crash(b"c", None, "crash", 0, "w")
    store.put_crash(b"h", None, "hang", 0, "w")
    stats = store.stats()
    assert stats == {"seeds": 2, "pending": 1, "active": 1, "discarded": 0,
                     "crashes": 1, "hangs": 1}


def test_active_ids_in_activation_order():
    store = StoreCore()
    a, _ = store.put_seed(b"a", None, 0, "w", pending_status())
    b, _ = store.put_seed(b"b", None, 0, "w", pending_status())
    store.activate_seed(b, 1, 1)
    store.activate_seed(a, 1, 1)
    assert store.active_ids() == [b, a]


def test_wal_replay_rebuilds_store(tmp_path):
    wal = str(tmp_path / "store.wal")
    store = StoreCore(audit=True, wal_path=wal)
    a, _ = store.put_seed(b"alpha", None, 1, "w0", pending_status(depth=1))
    b, _ = store.put_seed(b"beta", a, 2, "w1", pending_status(depth=2))
    c, _ = store.put_seed(b"gamma", a, 3, "w1", pending_status())
    store.activate_seed(a, bitmap_size=5, exec_time_us=100)
    store.update_status(a, fuzz_count_delta=7)
    store.discard_seed(b)
    store.put_crash(b"ouch", a, "crash", 4, "w0")
    store.close()

    replayed = replay_log(wal)
    assert replayed.get_seed(a).content == b"alpha"
    assert replayed.get_status(a).state is SeedState.ACTIVE
    assert replayed.get_status(a).fuzz_count == 7
    assert replayed.get_status(a).bitmap_size == 5
    assert replayed.get_status(b).state is SeedState.DISCARDED
    assert replayed.get_status(c).state is SeedState.PENDING_EVALUATION
    assert len(replayed.crashes()) == 1
    assert replayed.stats() == store.stats()


def test_wal_replay_rejects_truncated_log(tmp_path):
    wal = str(tmp_path / "bad.wal")
    store = StoreCore(wal_path=wal)
    store.put_seed(b"x", None, 0, "w", pending_status())
    store.close()
    data = open(wal, "rb").read()
    open(wal, "wb").write(data[:-3])
    with pytest.raises(StoreError):
        replay_log(wal)


def test_local_cache_hit_miss_accounting():
    cache = LocalCache()
    seed = Seed("id1", b"c", None, 0, "w")
    assert cache.get("id1") is None
    cache.put(seed)
    assert cache.get("id1") is seed
    assert cache.hits == 1 and cache.misses == 1
    assert len(cache) == 1
