import threading
import time

import pytest

from crowdtrain.datastore import DataStore
from crowdtrain.errors import NoSuchKey, VersionConflict, WaitTimeout


@pytest.fixture
def store():
    return DataStore()


def test_put_get_plain_round_trip(store):
    store.put_plain("k", b"value")
    assert store.get_plain("k") == b"value"


def test_plain_overwrite_last_write_wins(store):
    store.put_plain("k", b"one")
    store.put_plain("k", b"two")
    assert store.get_plain("k") == b"two"


def test_plain_missing_key(store):
    with pytest.raises(NoSuchKey):
        store.get_plain("nope")


def test_plain_bulk_keys(store):
    expected = {}
    for i in range(10_000):
        payload = f"payload-{i}".encode()
        store.put_plain(f"key-{i}", payload)
        expected[f"key-{i}"] = payload
    for key, payload in expected.items():
        assert store.get_plain(key) == payload


def test_plain_sequenced_writers_read_last(store):
    # single key, interleaved writers, sequenced by a lock step counter
    for i in range(100):
        store.put_plain("k", str(i).encode())
    assert store.get_plain("k") == b"99"


def test_versioned_fresh_key_takes_zero(store):
    store.put_versioned("m", 0, b"init")
    assert store.get_versioned("m") == (0, b"init")


def test_versioned_fresh_key_takes_one(store):
    store.put_versioned("m", 1, b"first")
    assert store.get_versioned("m") == (1, b"first")


def test_versioned_fresh_key_rejects_other(store):
    with pytest.raises(VersionConflict):
        store.put_versioned("m", 2, b"x")


def test_versioned_cas_semantics(store):
    store.put_versioned("m", 0, b"v0")
    store.put_versioned("m", 1, b"v1")
    with pytest.raises(VersionConflict):
        store.put_versioned("m", 1, b"v1-again")
    assert store.get_versioned("m") == (1, b"v1")


def test_versioned_counter_oracle(store):
    store.put_versioned("m", 0, b"v0")
    for k in range(1, 25):
        store.put_versioned("m", k, f"v{k}".encode())
    assert store.get_versioned("m") == (24, b"v24")


def test_versioned_missing_key(store):
    with pytest.raises(NoSuchKey):
        store.get_versioned("nope")


def test_concurrent_cas_single_winner(store):
    store.put_versioned("m", 0, b"v0")
    for version in range(1, 20):
        outcomes = []
        barrier = threading.Barrier(6)

        def attempt(i, version=version):
            barrier.wait()
            try:
                store.put_versioned("m", version, f"w{i}".encode())
                outcomes.append("ok")
            except VersionConflict:
                outcomes.append("conflict")

        threads = [threading.Thread(target=attempt, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert outcomes.count("ok") == 1
        assert outcomes.count("conflict") == 5


def test_version_monotonic_under_reads(store):
    store.put_versioned("m", 0, b"v0")
    seen = []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            seen.append(store.get_versioned("m")[0])

    t = threading.Thread(target=reader)
    t.start()
    for k in range(1, 200):
        store.put_versioned("m", k, b"x")
    stop.set()
    t.join()
    assert seen == sorted(seen)


def test_wait_already_satisfied_returns_immediately(store):
    store.put_versioned("m", 0, b"v0")
    store.put_versioned("m", 1, b"v1")
    version, payload = store.wait_for_version("m", 1, timeout_ms=10_000)
    assert (version, payload) == (1, b"v1")


def test_wait_wakes_on_write(store):
    store.put_versioned("m", 0, b"v0")

    def writer():
        time.sleep(0.05)
        store.put_versioned("m", 1, b"v1")

    t = threading.Thread(target=writer)
    start = time.monotonic()
    t.start()
    version, _ = store.wait_for_version("m", 1, timeout_ms=1000)
    elapsed = time.monotonic() - start
    t.join()
    assert version >= 1
    assert elapsed < 1.0


def test_wait_times_out(store):
    store.put_versioned("m", 0, b"v0")
    store.put_versioned("m", 1, b"v1")
    store.put_versioned("m", 2, b"v2")
    with pytest.raises(WaitTimeout):
        store.wait_for_version("m", 5, timeout_ms=80)


def test_wait_missing_key_counts_as_timeout(store):
    with pytest.raises(WaitTimeout):
        store.wait_for_version("ghost", 0, timeout_ms=50)


def test_wait_never_returns_less_than_min(store):
    store.put_versioned("m", 0, b"v0")
    results = []

    def waiter():
        results.append(store.wait_for_version("m", 3, timeout_ms=2000)[0])

    threads = [threading.Thread(target=waiter) for _ in range(4)]
    for t in threads:
        t.start()
    for k in range(1, 6):
        store.put_versioned("m", k, b"x")
        time.sleep(0.005)
    for t in threads:
        t.join()
    assert all(v >= 3 for v in results)
