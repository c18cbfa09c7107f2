"""The volunteer executable: fetch -> execute -> ack, one task at a time.

A worker polls its queues in order, dispatches each leased task to the
handler registered for the task's kind, and acks only after the handler
returns cleanly. Handler failure (or a crash, or a kill) means no ack, so
the lease expires and the broker redelivers. The loop exits on a lifetime
limit, a clean stop, a kill, or when the job's completion sentinel shows up
in the datastore.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

from .errors import ConnectionLost, NoSuchKey, UnknownLease, WorkerKilled


@dataclass(frozen=True)
class WorkerConfig:
    worker_id: str
    queues: tuple[str, ...] = ("InitialQueue",)
    poll_backoff_ms: float = 50.0
    max_tasks: int | None = None
    max_wall_ms: float | None = None
    job_id: str | None = None
    time_origin_ms: float | None = None  # shared experiment clock origin
    connect_retries: int = 5

    def __post_init__(self) -> None:
        if not self.queues:
            raise ValueError("worker needs at least one queue")
        if self.poll_backoff_ms <= 0:
            raise ValueError("poll_backoff_ms must be > 0")


@dataclass(frozen=True)
class RunEvent:
    """One executed task: [t_start, t_end] in ms relative to the origin."""

    worker_id: str
    task_id: int
    kind: str
    t_start: float
    t_end: float


@dataclass
class WorkerReport:
    worker_id: str
    tasks_done: int = 0
    tasks_failed: int = 0
    started_ms: float = 0.0
    ended_ms: float = 0.0
    killed: bool = False
    events: list[RunEvent] = field(default_factory=list)


class WorkerContext:
    """Capabilities handed to task handlers; also the kill/stop switch."""

    def __init__(self, broker, store, worker_id: str):
        self.broker = broker
        self.store = store
        self.worker_id = worker_id
        self._kill = threading.Event()
        self._stop = threading.Event()
        self._lease_deadline: float | None = None

    def begin_lease(self, duration_ms: float) -> None:
        self._lease_deadline = time.monotonic() * 1000.0 + duration_ms

    def end_lease(self) -> None:
        self._lease_deadline = None

    def remaining_lease_ms(self) -> float | None:
        """Time left on the current lease; None when not under a lease.

        Handlers bound their waits by this: once the broker has expired the
        lease, another worker owns the task and continuing would only steal
        leases a live execution needs.
        """
        if self._lease_deadline is None:
            return None
        return self._lease_deadline - time.monotonic() * 1000.0

    def kill(self) -> None:
        """Abrupt departure: abandon everything at the next checkpoint."""
        self._kill.set()

    def stop(self) -> None:
        """Clean departure: finish (and ack) the current task, then exit."""
        self._stop.set()

    @property
    def killed(self) -> bool:
        return self._kill.is_set()

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()

    def checkpoint(self) -> None:
        if self._kill.is_set():
            raise WorkerKilled(self.worker_id)

    def sleep_ms(self, ms: float) -> None:
        if self._kill.wait(ms / 1000.0):
            raise WorkerKilled(self.worker_id)


def detect_job_complete(store, job_id: str) -> bool:
    """True once the model version has reached the job's total step count."""
    try:
        meta = json.loads(store.get_plain(f"{job_id}:meta").decode("utf-8"))
        version, _ = store.get_versioned(meta["model_key"])
    except NoSuchKey:
        return False
    return version >= meta["total_steps"]


def run_worker(broker, store, config: WorkerConfig, handlers: dict, ctx: WorkerContext | None = None) -> WorkerReport:
    """Run the task loop until a limit, stop, kill, or job completion.

    ``handlers`` maps kind strings to callables(task, ctx). Returns the exit
    report with one RunEvent per executed task.
    """
    if ctx is None:
        ctx = WorkerContext(broker, store, config.worker_id)
    origin = config.time_origin_ms if config.time_origin_ms is not None else _now_ms()
    report = WorkerReport(worker_id=config.worker_id, started_ms=_now_ms() - origin)
    wall_deadline = (
        None if config.max_wall_ms is None else time.monotonic() * 1000.0 + config.max_wall_ms
    )
    failures_in_a_row = 0

    try:
        while True:
            if ctx.stopping:
                break
            if config.max_tasks is not None and report.tasks_done >= config.max_tasks:
                break
            if wall_deadline is not None and time.monotonic() * 1000.0 >= wall_deadline:
                break

            lease = None
            for queue in config.queues:
                lease = _with_retries(
                    lambda q=queue: broker.fetch(q, config.worker_id), config, ctx
                )
                if lease is not None:
                    break

            if lease is None:
                if config.job_id and detect_job_complete(store, config.job_id):
                    break
                ctx.sleep_ms(config.poll_backoff_ms)
                continue

            handler = handlers.get(lease.task.kind)
            t_start = _now_ms() - origin
            if handler is None:
                # Not ours to solve; leave the lease to expire.
                report.tasks_failed += 1
                ctx.sleep_ms(config.poll_backoff_ms)
                continue
            ctx.begin_lease(lease.deadline - lease.issued_at)
            try:
                handler(lease.task, ctx)
            except WorkerKilled:
                raise
            except Exception:
                report.tasks_failed += 1
                report.events.append(
                    RunEvent(config.worker_id, lease.task.task_id, lease.task.kind, t_start, _now_ms() - origin)
                )
                continue
            finally:
                ctx.end_lease()
            ctx.checkpoint()
            try:
                _with_retries(lambda: broker.ack(lease.lease_id), config, ctx)
            except UnknownLease:
                pass  # lease expired mid-task; a replay will be deduped
            report.tasks_done += 1
            report.events.append(
                RunEvent(config.worker_id, lease.task.task_id, lease.task.kind, t_start, _now_ms() - origin)
            )
    except WorkerKilled:
        report.killed = True
    finally:
        report.ended_ms = _now_ms() - origin
    return report


def _with_retries(op, config: WorkerConfig, ctx: WorkerContext):
    """Run a broker/store call, retrying ConnectionLost with backoff."""
    delay_ms = 20.0
    for attempt in range(config.connect_retries + 1):
        try:
            return op()
        except ConnectionLost:
            if attempt == config.connect_retries:
                raise
            ctx.sleep_ms(delay_ms)
            delay_ms = min(delay_ms * 2, 2000.0)


def _now_ms() -> float:
    return time.monotonic() * 1000.0
