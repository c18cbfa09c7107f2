import threading

import pytest

from crowdtrain.broker import Broker, ManualClock
from crowdtrain.errors import NoSuchQueue, QueueExists, UnknownLease
from crowdtrain.jobmodel import TaskEnvelope

from oracles import priority_sort


def env(task_id, version=0, duration=1000, payload=b"", kind="map"):
    return TaskEnvelope(
        task_id=task_id,
        job_id="j",
        kind=kind,
        payload=payload,
        required_model_version=version,
        max_duration_ms=duration,
    )


@pytest.fixture
def clocked():
    clock = ManualClock()
    return Broker(clock=clock), clock


def test_create_queue_fresh(clocked):
    broker, _ = clocked
    broker.create_queue("InitialQueue")
    assert broker.depth("InitialQueue") == (0, 0)


def test_create_queue_duplicate(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    with pytest.raises(QueueExists):
        broker.create_queue("q")


def test_thousand_queues_independent(clocked):
    broker, _ = clocked
    for i in range(1000):
        broker.create_queue(f"q{i}")
    broker.publish("q500", env(1))
    for i in range(1000):
        expected = (1, 0) if i == 500 else (0, 0)
        assert broker.depth(f"q{i}") == expected


def test_publish_depth_and_missing_queue(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    broker.publish("q", env(1))
    assert broker.depth("q") == (1, 0)
    with pytest.raises(NoSuchQueue):
        broker.publish("nope", env(2))
    with pytest.raises(NoSuchQueue):
        broker.depth("nope")
    with pytest.raises(NoSuchQueue):
        broker.fetch("nope", "w")


def test_publish_full_paper_shaped_job(clocked):
    # 5 epochs x 16 batches x 16 mini-batches of map work
    broker, _ = clocked
    broker.create_queue("q")
    for i in range(5 * 16 * 16):
        broker.publish("q", env(i, version=i // 16))
    assert broker.depth("q") == (1280, 0)


def test_fetch_empty_returns_none(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    assert broker.fetch("q", "w") is None


def test_fetch_priority_order(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    tasks = [env(10, version=2), env(11, version=1), env(12, version=1)]
    for t in tasks:
        broker.publish("q", t)
    got = [broker.fetch("q", "w").task.task_id for _ in range(3)]
    assert got == [11, 12, 10]
    assert got == priority_sort(tasks)


def test_fetch_increments_delivery_count(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    broker.publish("q", env(1))
    lease = broker.fetch("q", "w")
    assert lease.task.delivery_count == 1


def test_concurrent_fetch_single_winner(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    results = []
    barrier = threading.Barrier(8)

    def worker(i):
        barrier.wait()
        results.append(broker.fetch("q", f"w{i}"))

    for _ in range(50):
        broker.publish("q", env(1))
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        leases = [r for r in results if r is not None]
        assert len(leases) == 1
        broker.ack(leases[0].lease_id)
        results.clear()


def test_ack_lifecycle(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    broker.publish("q", env(1))
    lease = broker.fetch("q", "w")
    broker.ack(lease.lease_id)
    assert broker.depth("q") == (0, 0)
    assert broker.fetch("q", "w") is None
    with pytest.raises(UnknownLease):
        broker.ack(lease.lease_id)


def test_ack_after_expiry_rejected_and_task_requeued(clocked):
    broker, clock = clocked
    broker.create_queue("q")
    broker.publish("q", env(1, duration=100))
    lease = broker.fetch("q", "w")
    clock.advance(100)
    assert broker.sweep_expired() == 1
    with pytest.raises(UnknownLease):
        broker.ack(lease.lease_id)
    again = broker.fetch("q", "w2")
    assert again.task.task_id == 1
    assert again.task.delivery_count == 2


def test_sweep_no_leases(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    assert broker.sweep_expired() == 0


def test_sweep_respects_deadline(clocked):
    broker, clock = clocked
    broker.create_queue("q")
    broker.publish("q", env(1, duration=500))
    broker.fetch("q", "w")
    clock.advance(499)
    assert broker.sweep_expired() == 0
    clock.advance(1)
    assert broker.sweep_expired() == 1
    assert broker.depth("q") == (1, 0)


def test_sweep_five_expired_keeps_conservation(clocked):
    broker, clock = clocked
    broker.create_queue("q")
    for i in range(5):
        broker.publish("q", env(i, duration=100))
    for i in range(5):
        broker.fetch("q", f"w{i}")
    clock.advance(200)
    assert broker.sweep_expired() == 5
    pending, leased = broker.depth("q")
    published, acked = broker.counters("q")
    assert (pending, leased) == (5, 0)
    assert published == pending + leased + acked


def test_depth_sequences(clocked):
    broker, _ = clocked
    broker.create_queue("q")
    for i in range(3):
        broker.publish("q", env(i))
    broker.fetch("q", "w")
    assert broker.depth("q") == (2, 1)

    broker2 = Broker(clock=ManualClock())
    broker2.create_queue("q")
    for i in range(16):
        broker2.publish("q", env(i))
    leases = [broker2.fetch("q", "w") for _ in range(16)]
    for lease in leases[:7]:
        broker2.ack(lease.lease_id)
    assert broker2.depth("q") == (0, 9)


def test_priority_determinism_random_publish_set():
    import random

    rng = random.Random(1234)
    broker = Broker(clock=ManualClock())
    broker.create_queue("q")
    tasks = [env(i, version=rng.randrange(6)) for i in rng.sample(range(10_000), 300)]
    for t in tasks:
        broker.publish("q", t)
    drained = []
    while True:
        lease = broker.fetch("q", "w")
        if lease is None:
            break
        drained.append(lease.task.task_id)
        broker.ack(lease.lease_id)
    assert drained == priority_sort(tasks)
