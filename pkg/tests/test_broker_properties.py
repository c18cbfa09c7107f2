"""Randomized semantics checks: broker vs oracle, at-least-once under chaos."""

import random
import threading

import pytest

from crowdtrain.broker import Broker, BrokerSweeper
from crowdtrain.errors import UnknownLease
from crowdtrain.jobmodel import TaskEnvelope

from broker_model import drive_random_ops


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_ops_match_oracle(seed):
    stats = drive_random_ops(20_000, seed=seed)
    assert stats["publish"] > 1000
    assert stats["expired"] > 50  # the stream actually exercised redelivery


def test_at_least_once_under_flaky_workers():
    """Every published task ends up acked exactly once even when workers
    randomly die before acking; expiry redelivers until someone finishes."""
    broker = Broker()  # wall clock
    broker.create_queue("q")
    total = 300
    for i in range(total):
        broker.publish(
            "q",
            TaskEnvelope(
                task_id=i, job_id="j", kind="map", payload=b"",
                required_model_version=i % 5, max_duration_ms=40,
            ),
        )

    acked: list[int] = []
    acked_lock = threading.Lock()

    def flaky_worker(worker_seed):
        rng = random.Random(worker_seed)
        while True:
            lease = broker.fetch("q", f"w{worker_seed}")
            if lease is None:
                with acked_lock:
                    if len(acked) >= total:
                        return
                continue
            if rng.random() < 0.3:
                continue  # "die" mid-task: never ack
            try:
                broker.ack(lease.lease_id)
            except UnknownLease:
                continue  # lease expired first; someone else will finish it
            with acked_lock:
                acked.append(lease.task.task_id)

    with BrokerSweeper(broker, interval_ms=5):
        workers = [threading.Thread(target=flaky_worker, args=(s,)) for s in range(6)]
        for w in workers:
            w.start()
        for w in workers:
            w.join(timeout=60)
    assert sorted(acked) == list(range(total))  # exactly once each
    published, acked_counter = broker.counters("q")
    pending, leased = broker.depth("q")
    assert acked_counter == total
    assert pending + leased + acked_counter == published
