"""Model-based checking of the broker against a naive reference oracle.

The oracle stores pending tasks in plain lists and picks fetch results by a
linear scan for the minimum (required_model_version, task_id) — obviously
correct, nothing shared with the real heap-based broker. The driver feeds
both the same random operation stream under a manual clock and compares
every observable output, plus the single-lease and conservation invariants
after each step.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from crowdtrain.broker import Broker, ManualClock
from crowdtrain.errors import NoSuchQueue, QueueExists, UnknownLease
from crowdtrain.jobmodel import TaskEnvelope


@dataclass
class _OracleLease:
    task_id: int
    deadline: float
    envelope: TaskEnvelope


class OracleBroker:
    def __init__(self):
        self.queues: dict[str, dict] = {}

    def create_queue(self, name):
        if name in self.queues:
            return "QueueExists"
        self.queues[name] = {"pending": [], "leases": {}, "published": 0, "acked": 0}
        return "ok"

    def publish(self, queue, envelope):
        q = self.queues.get(queue)
        if q is None:
            return "NoSuchQueue"
        q["pending"].append(envelope)
        q["published"] += 1
        return "ok"

    def fetch(self, queue, now):
        q = self.queues.get(queue)
        if q is None:
            return "NoSuchQueue"
        if not q["pending"]:
            return None
        best = min(q["pending"], key=lambda t: (t.required_model_version, t.task_id))
        q["pending"].remove(best)
        delivered = best.delivered()
        handle = object()
        q["leases"][handle] = _OracleLease(
            delivered.task_id, now + delivered.max_duration_ms, delivered
        )
        return delivered.task_id, delivered.delivery_count, handle

    def ack(self, queue, handle):
        q = self.queues[queue]
        if handle not in q["leases"]:
            return "UnknownLease"
        del q["leases"][handle]
        q["acked"] += 1
        return "ok"

    def sweep(self, now):
        count = 0
        for q in self.queues.values():
            expired = [h for h, lease in q["leases"].items() if lease.deadline <= now]
            for handle in expired:
                q["pending"].append(q["leases"].pop(handle).envelope)
                count += 1
        return count

    def depth(self, queue):
        q = self.queues.get(queue)
        if q is None:
            return "NoSuchQueue"
        return len(q["pending"]), len(q["leases"])


def drive_random_ops(n_ops: int, seed: int, max_pending: int = 200) -> dict:
    """Run n_ops random operations against broker and oracle; raise on any
    divergence. Returns op counters for reporting."""
    rng = random.Random(seed)
    clock = ManualClock()
    broker = Broker(clock=clock)
    oracle = OracleBroker()
    queue_names = [f"q{i}" for i in range(3)]
    # lease bookkeeping: real lease_id -> (queue, oracle handle, task_id)
    live: dict[str, tuple[str, object, int]] = {}
    retired: list[str] = []  # fodder for double-ack attempts
    next_task_id = 0
    stats = {"publish": 0, "fetch": 0, "ack": 0, "bad_ack": 0, "sweep": 0, "expired": 0}

    def check_queue(name):
        try:
            real = broker.depth(name)
        except NoSuchQueue:
            real = "NoSuchQueue"
        assert real == oracle.depth(name), f"depth mismatch on {name}"
        if real != "NoSuchQueue":
            published, acked = broker.counters(name)
            pending, leased = real
            assert published == pending + leased + acked, (
                f"conservation broken on {name}: {published} != "
                f"{pending}+{leased}+{acked}"
            )

    for name in queue_names:
        assert broker_create(broker, name) == oracle.create_queue(name)

    for op_index in range(n_ops):
        roll = rng.random()
        queue = rng.choice(queue_names)
        if roll < 0.34:
            if oracle.depth(queue)[0] >= max_pending:
                continue
            task = TaskEnvelope(
                task_id=next_task_id,
                job_id="model",
                kind="map",
                payload=b"",
                required_model_version=rng.randrange(8),
                max_duration_ms=rng.choice([50, 200, 1000]),
            )
            next_task_id += 1
            assert broker_publish(broker, queue, task) == oracle.publish(queue, task)
            stats["publish"] += 1
        elif roll < 0.64:
            lease = broker.fetch(queue, "w")
            expected = oracle.fetch(queue, clock.now)
            if lease is None:
                assert expected is None
            else:
                task_id, delivery_count, handle = expected
                assert lease.task.task_id == task_id, (
                    f"fetch order diverged at op {op_index}"
                )
                assert lease.task.delivery_count == delivery_count
                live[lease.lease_id] = (queue, handle, task_id)
            stats["fetch"] += 1
        elif roll < 0.82:
            if live and rng.random() < 0.85:
                lease_id = rng.choice(list(live))
                q, handle, _ = live.pop(lease_id)
                assert broker_ack(broker, lease_id) == oracle.ack(q, handle)
                retired.append(lease_id)
                stats["ack"] += 1
            elif retired:
                lease_id = rng.choice(retired)
                assert broker_ack(broker, lease_id) == "UnknownLease"
                stats["bad_ack"] += 1
        elif roll < 0.95:
            clock.advance(rng.choice([10, 60, 300, 1500]))
            expired_real = broker.sweep_expired()
            expired_oracle = oracle.sweep(clock.now)
            assert expired_real == expired_oracle, (
                f"sweep count diverged at op {op_index}: {expired_real} vs {expired_oracle}"
            )
            # leases the oracle expired are dead for the real broker too
            for lease_id in list(live):
                q, handle, _ = live[lease_id]
                if handle not in oracle.queues[q]["leases"]:
                    live.pop(lease_id)
                    retired.append(lease_id)
            stats["sweep"] += 1
            stats["expired"] += expired_real
        else:
            check_queue(queue)

        if op_index % 97 == 0:
            # single-lease: no task_id may appear under two live leases
            per_queue: dict[str, list[int]] = {}
            for q, _, task_id in live.values():
                per_queue.setdefault(q, []).append(task_id)
            for q, ids in per_queue.items():
                assert len(ids) == len(set(ids)), f"double lease in {q}"
            for name in queue_names:
                check_queue(name)

    for name in queue_names:
        check_queue(name)
    return stats


def broker_create(broker, name):
    try:
        broker.create_queue(name)
        return "ok"
    except QueueExists:
        return "QueueExists"


def broker_publish(broker, queue, task):
    try:
        broker.publish(queue, task)
        return "ok"
    except NoSuchQueue:
        return "NoSuchQueue"


def broker_ack(broker, lease_id):
    try:
        broker.ack(lease_id)
        return "ok"
    except UnknownLease:
        return "UnknownLease"
