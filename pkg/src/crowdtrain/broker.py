"""In-memory work-queue broker with lease-based at-least-once delivery.

Named queues hold pending tasks in (required_model_version, task_id) priority
order. A fetch moves the head task into a lease with a visibility deadline;
an ack before the deadline removes the task for good, otherwise a sweep puts
it back into pending with its delivery count preserved. All operations take
one lock, so every observable state transition is linearizable.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from dataclasses import dataclass, field

from .errors import NoSuchQueue, QueueExists, UnknownLease
from .jobmodel import TaskEnvelope


def monotonic_ms() -> float:
    return time.monotonic() * 1000.0


class ManualClock:
    """Hand-advanced millisecond clock for deterministic tests."""

    def __init__(self, start: float = 0.0):
        self.now = float(start)

    def __call__(self) -> float:
        return self.now

    def advance(self, ms: float) -> None:
        self.now += ms


@dataclass(frozen=True)
class Lease:
    """A broker-issued claim on a task; expires at ``deadline`` ms."""

    lease_id: str
    task: TaskEnvelope
    worker_id: str
    issued_at: float
    deadline: float


@dataclass
class _Queue:
    # heap entries: (required_model_version, task_id, seq, envelope)
    pending: list = field(default_factory=list)
    lease_ids: set = field(default_factory=set)
    published: int = 0
    acked: int = 0


class Broker:
    """The queue server. All public methods are thread-safe."""

    def __init__(self, clock=None):
        self._clock = clock if clock is not None else monotonic_ms
        self._lock = threading.Lock()
        self._queues: dict[str, _Queue] = {}
        self._leases: dict[str, tuple[str, Lease]] = {}
        self._seq = itertools.count()
        self._lease_seq = itertools.count(1)
        self.last_ack_ms: float | None = None

    def create_queue(self, name: str) -> None:
        if not name:
            raise ValueError("queue name must be non-empty")
        with self._lock:
            if name in self._queues:
                raise QueueExists(name)
            self._queues[name] = _Queue()

    def ensure_queue(self, name: str) -> None:
        """create_queue that tolerates the queue already existing."""
        with self._lock:
            self._queues.setdefault(name, _Queue())

    def queue_names(self) -> list[str]:
        with self._lock:
            return sorted(self._queues)

    def publish(self, queue: str, task: TaskEnvelope) -> None:
        with self._lock:
            q = self._get(queue)
            heapq.heappush(
                q.pending,
                (task.required_model_version, task.task_id, next(self._seq), task),
            )
            q.published += 1

    def fetch(self, queue: str, worker_id: str) -> Lease | None:
        """Lease the highest-priority pending task, or None when empty."""
        with self._lock:
            q = self._get(queue)
            if not q.pending:
                return None
            _, _, _, task = heapq.heappop(q.pending)
            now = self._clock()
            delivered = task.delivered()
            lease = Lease(
                lease_id=f"L{next(self._lease_seq)}",
                task=delivered,
                worker_id=worker_id,
                issued_at=now,
                deadline=now + delivered.max_duration_ms,
            )
            self._leases[lease.lease_id] = (queue, lease)
            q.lease_ids.add(lease.lease_id)
            return lease

    def ack(self, lease_id: str) -> None:
        with self._lock:
            entry = self._leases.pop(lease_id, None)
            if entry is None:
                raise UnknownLease(lease_id)
            queue, lease = entry
            q = self._queues[queue]
            q.lease_ids.discard(lease_id)
            q.acked += 1
            self.last_ack_ms = self._clock()

    def sweep_expired(self, now: float | None = None) -> int:
        """Return every lease past its deadline to pending; count them."""
        if now is None:
            now = self._clock()
        with self._lock:
            expired = [
                (lease_id, queue, lease)
                for lease_id, (queue, lease) in self._leases.items()
                if lease.deadline <= now
            ]
            for lease_id, queue, lease in expired:
                del self._leases[lease_id]
                q = self._queues[queue]
                q.lease_ids.discard(lease_id)
                task = lease.task
                heapq.heappush(
                    q.pending,
                    (task.required_model_version, task.task_id, next(self._seq), task),
                )
            return len(expired)

    def depth(self, queue: str) -> tuple[int, int]:
        with self._lock:
            q = self._get(queue)
            return len(q.pending), len(q.lease_ids)

    def counters(self, queue: str) -> tuple[int, int]:
        """(publish events, ack events) — for conservation checks."""
        with self._lock:
            q = self._get(queue)
            return q.published, q.acked

    def _get(self, queue: str) -> _Queue:
        q = self._queues.get(queue)
        if q is None:
            raise NoSuchQueue(queue)
        return q


class BrokerSweeper:
    """Timer loop that invokes sweep_expired in wall-clock service mode."""

    def __init__(self, broker: Broker, interval_ms: float = 25.0):
        self._broker = broker
        self._interval = interval_ms / 1000.0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "BrokerSweeper":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def _run(self) -> None:
        while not self._stop.wait(self._interval):
            self._broker.sweep_expired()

    def __enter__(self) -> "BrokerSweeper":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
