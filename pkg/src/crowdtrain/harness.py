"""Experiment driver: worker fleets, churn, latency, and scaling reports.

An experiment plans a fresh job, launches n workers on a join/leave
schedule, waits for the job's final model version, and measures runtime
from the first worker start to the last task acknowledgement. The scaling
suite repeats that across worker counts and start modes, then derives
relative speedup S(n) = T(1)/T(n), efficiency E(n) = S(n)/n, and absolute
speedup against a timed single-process sequential run.

Results (loss trace, final model bytes) are deterministic in the job seed
no matter the fleet shape; only the timing columns vary.
"""

from __future__ import annotations

import csv
import os
import random
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace

from .broker import Broker, BrokerSweeper
from .datastore import DataStore
from .errors import ExperimentStalled, MalformedEvents
from .jobmodel import JobSpec
from .nn import init_params
from .trainer import (
    JobKnobs,
    TaskHandlers,
    TrainingConfig,
    build_dataset,
    collect_loss_trace,
    plan_job,
    sequential_train,
)
from .worker import RunEvent, WorkerConfig, WorkerContext, WorkerReport, run_worker


@dataclass(frozen=True)
class ChurnEntry:
    worker_id: str
    join_at_ms: float
    leave_at_ms: float | None = None
    leave_mode: str = "clean"  # "clean" | "kill"

    def __post_init__(self) -> None:
        if self.leave_at_ms is not None and not self.join_at_ms < self.leave_at_ms:
            raise ValueError("join_at_ms must precede leave_at_ms")
        if self.leave_mode not in ("clean", "kill"):
            raise ValueError(f"bad leave_mode {self.leave_mode!r}")


def sync_start(n_workers: int) -> list[ChurnEntry]:
    return [ChurnEntry(f"w{i}", 0.0) for i in range(n_workers)]


def async_start(n_workers: int, stagger_ms: float) -> list[ChurnEntry]:
    return [ChurnEntry(f"w{i}", i * stagger_ms) for i in range(n_workers)]


def random_kill_schedule(
    n_workers: int, kill_fraction: float, window_ms: tuple[float, float], seed: int
) -> list[ChurnEntry]:
    """Sync-start fleet where a seeded random half leaves abruptly."""
    rng = random.Random(seed)
    victims = set(rng.sample(range(n_workers), int(n_workers * kill_fraction)))
    entries = []
    for i in range(n_workers):
        if i in victims:
            leave = rng.uniform(*window_ms)
            entries.append(ChurnEntry(f"w{i}", 0.0, leave_at_ms=leave, leave_mode="kill"))
        else:
            entries.append(ChurnEntry(f"w{i}", 0.0))
    return entries


class _LatencyProxy:
    """Adds a per-call delay in front of a broker or store, simulating the
    client's network distance; the service itself stays honest."""

    def __init__(self, inner, delay_fn):
        self._inner = inner
        self._delay = delay_fn

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr
        delay = self._delay

        def wrapped(*args, **kwargs):
            d = delay()
            if d > 0:
                time.sleep(d / 1000.0)
            return attr(*args, **kwargs)

        return wrapped


def _latency_fn(latency_ms, seed: int, worker_index: int):
    if latency_ms in (0, 0.0, None):
        return lambda: 0.0
    if isinstance(latency_ms, (int, float)):
        return lambda: float(latency_ms)
    lo, hi = latency_ms
    rng = random.Random((seed << 16) ^ worker_index)
    return lambda: rng.uniform(lo, hi)


@dataclass
class ExperimentConfig:
    training: TrainingConfig
    corpus: str
    init_seed: int = 0
    knobs: JobKnobs = field(default_factory=JobKnobs)
    mode: str = "sync"  # "sync" | "async"
    async_stagger_ms: float = 200.0
    latency_ms: object = 0.0  # fixed ms, or (lo, hi) for seeded uniform
    latency_seed: int = 0
    stall_window_ms: float = 30_000.0
    worker_poll_backoff_ms: float = 5.0
    sweep_interval_ms: float = 10.0
    worker_mode: str = "thread"  # "thread" | "subprocess"


@dataclass
class ExperimentResult:
    n_workers: int
    mode: str
    runtime_ms: float
    final_loss: float
    total_steps: int
    model_blob: bytes
    loss_rows: list[dict]
    reports: list[WorkerReport]
    churn: list[ChurnEntry]

    @property
    def events(self) -> list[RunEvent]:
        return [event for report in self.reports for event in report.events]


def run_experiment(
    exp: ExperimentConfig,
    n_workers: int,
    churn: list[ChurnEntry] | None = None,
    job_id: str | None = None,
) -> ExperimentResult:
    """One fresh coordinator + fleet; returns measurements and artifacts."""
    if churn is None:
        churn = (
            sync_start(n_workers)
            if exp.mode == "sync"
            else async_start(n_workers, exp.async_stagger_ms)
        )
    job_id = job_id or f"exp-{exp.mode}-{n_workers}-{int(time.time() * 1000)}"

    broker = Broker()
    store = DataStore()
    job = JobSpec(job_id=job_id)
    vocab, _ = build_dataset(exp.corpus, exp.training)
    params = init_params(exp.training.model_config(len(vocab)), seed=exp.init_seed)
    plan = plan_job(broker, store, job, exp.training, exp.corpus, params, exp.knobs)

    if exp.worker_mode == "subprocess":
        runner = _SubprocessFleet(exp, broker, store, job)
    else:
        runner = _ThreadFleet(exp, broker, store, job)

    with BrokerSweeper(broker, exp.sweep_interval_ms):
        reports, first_start_ms = runner.run(churn, plan.total_steps)

    if store.version_of(job.model_key) != plan.total_steps:
        raise ExperimentStalled(
            f"{job_id}: model at {store.version_of(job.model_key)} of {plan.total_steps}"
        )
    last_ack = broker.last_ack_ms if broker.last_ack_ms is not None else first_start_ms
    loss_rows = collect_loss_trace(store, job, plan.total_steps)
    final_loss = loss_rows[-1]["loss"] if loss_rows else float("nan")
    return ExperimentResult(
        n_workers=n_workers,
        mode=exp.mode,
        runtime_ms=max(0.0, last_ack - first_start_ms),
        final_loss=final_loss,
        total_steps=plan.total_steps,
        model_blob=store.get_versioned(job.model_key)[1],
        loss_rows=loss_rows,
        reports=reports,
        churn=list(churn),
    )


class _ThreadFleet:
    def __init__(self, exp: ExperimentConfig, broker, store, job):
        self.exp = exp
        self.broker = broker
        self.store = store
        self.job = job

    def run(self, churn: list[ChurnEntry], total_steps: int):
        origin = time.monotonic() * 1000.0
        reports: list[WorkerReport] = []
        reports_lock = threading.Lock()
        threads: dict[str, threading.Thread] = {}
        contexts: dict[str, WorkerContext] = {}
        first_start = [None]

        def launch(entry: ChurnEntry, index: int):
            latency = _latency_fn(self.exp.latency_ms, self.exp.latency_seed, index)
            broker = _LatencyProxy(self.broker, latency)
            store = _LatencyProxy(self.store, latency)
            ctx = WorkerContext(broker, store, entry.worker_id)
            contexts[entry.worker_id] = ctx
            config = WorkerConfig(
                worker_id=entry.worker_id,
                queues=(self.job.task_queue,),
                job_id=self.job.job_id,
                poll_backoff_ms=self.exp.worker_poll_backoff_ms,
                time_origin_ms=origin,
            )

            def body():
                if first_start[0] is None:
                    first_start[0] = time.monotonic() * 1000.0
                report = run_worker(broker, store, config, TaskHandlers().table(), ctx=ctx)
                with reports_lock:
                    reports.append(report)

            thread = threading.Thread(target=body, name=f"worker-{entry.worker_id}")
            threads[entry.worker_id] = thread
            thread.start()

        pending = sorted(
            [(e.join_at_ms, "join", e, i) for i, e in enumerate(churn)]
            + [
                (e.leave_at_ms, e.leave_mode, e, i)
                for i, e in enumerate(churn)
                if e.leave_at_ms is not None
            ],
            key=lambda item: (item[0], item[3]),
        )
        stall_deadline = time.monotonic() * 1000.0 + self.exp.stall_window_ms
        last_version = -1

        cursor = 0
        while True:
            now = time.monotonic() * 1000.0 - origin
            while cursor < len(pending) and pending[cursor][0] <= now:
                _, action, entry, index = pending[cursor]
                cursor += 1
                if action == "join":
                    launch(entry, index)
                elif action == "kill":
                    contexts[entry.worker_id].kill()
                else:
                    contexts[entry.worker_id].stop()

            version = self.store.version_of(self.job.model_key)
            if version is not None and version != last_version:
                last_version = version
                stall_deadline = time.monotonic() * 1000.0 + self.exp.stall_window_ms
            if version == total_steps:
                break
            if time.monotonic() * 1000.0 > stall_deadline:
                for ctx in contexts.values():
                    ctx.kill()
                for thread in threads.values():
                    thread.join(timeout=5)
                raise ExperimentStalled(
                    f"no model progress in {self.exp.stall_window_ms}ms "
                    f"(version {version} of {total_steps})"
                )
            time.sleep(0.002)

        # job complete: let live workers notice and drain out
        for ctx in contexts.values():
            ctx.stop()
        for thread in threads.values():
            thread.join(timeout=30)
        if first_start[0] is None:
            first_start[0] = origin
        return reports, first_start[0]


class _SubprocessFleet:
    """Workers as real OS processes using the CLI; kill is SIGKILL."""

    def __init__(self, exp: ExperimentConfig, broker, store, job):
        from .server import Coordinator

        self.exp = exp
        self.job = job
        self.coordinator = Coordinator(broker=broker, store=store, tcp_port=0)
        self.store = store

    def run(self, churn: list[ChurnEntry], total_steps: int):
        import tempfile

        self.coordinator.start()
        host, port = self.coordinator.tcp_address
        endpoint = f"{host}:{port}"
        origin = time.monotonic() * 1000.0
        procs: dict[str, subprocess.Popen] = {}
        event_files: dict[str, str] = {}
        tmpdir = tempfile.mkdtemp(prefix="crowdtrain-fleet-")
        first_start = [None]

        def launch(entry: ChurnEntry):
            events_out = os.path.join(tmpdir, f"{entry.worker_id}.csv")
            event_files[entry.worker_id] = events_out
            cmd = [
                sys.executable,
                "-m",
                "crowdtrain",
                "worker",
                "--id",
                entry.worker_id,
                "--broker",
                endpoint,
                "--store",
                endpoint,
                "--queues",
                self.job.task_queue,
                "--job",
                self.job.job_id,
                "--backoff-ms",
                str(self.exp.worker_poll_backoff_ms),
                "--events-out",
                events_out,
            ]
            env = dict(os.environ)
            src_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
            env["PYTHONPATH"] = src_root + os.pathsep + env.get("PYTHONPATH", "")
            procs[entry.worker_id] = subprocess.Popen(
                cmd, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL
            )
            if first_start[0] is None:
                first_start[0] = time.monotonic() * 1000.0

        pending = sorted(
            [(e.join_at_ms, "join", e) for e in churn]
            + [(e.leave_at_ms, e.leave_mode, e) for e in churn if e.leave_at_ms is not None],
            key=lambda item: (item[0], item[2].worker_id),
        )
        cursor = 0
        stall_deadline = time.monotonic() * 1000.0 + self.exp.stall_window_ms
        last_version = -1
        try:
            while True:
                now = time.monotonic() * 1000.0 - origin
                while cursor < len(pending) and pending[cursor][0] <= now:
                    _, action, entry = pending[cursor]
                    cursor += 1
                    if action == "join":
                        launch(entry)
                    elif action == "kill":
                        procs[entry.worker_id].kill()
                    else:
                        procs[entry.worker_id].terminate()
                version = self.store.version_of(self.job.model_key)
                if version is not None and version != last_version:
                    last_version = version
                    stall_deadline = time.monotonic() * 1000.0 + self.exp.stall_window_ms
                if version == total_steps:
                    break
                if time.monotonic() * 1000.0 > stall_deadline:
                    raise ExperimentStalled(f"subprocess fleet stalled at {version}")
                time.sleep(0.01)
        finally:
            for proc in procs.values():
                if proc.poll() is None:
                    proc.terminate()
            for proc in procs.values():
                try:
                    proc.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    proc.kill()
            self.coordinator.stop()

        reports = []
        for worker_id, path in event_files.items():
            events = []
            if os.path.exists(path):
                events = read_events_csv(path)
            report = WorkerReport(worker_id=worker_id, tasks_done=len(events), events=events)
            reports.append(report)
        return reports, first_start[0] if first_start[0] is not None else origin


# -- reporting ----------------------------------------------------------------


@dataclass
class ScalingRow:
    mode: str
    n_workers: int
    runtime_ms: float
    final_loss: float
    relative_speedup: float | None = None
    efficiency: float | None = None
    absolute_speedup: float | None = None


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    sequential_ms: float | None
    sequential_loss: float | None

    def row(self, mode: str, n: int) -> ScalingRow:
        for row in self.rows:
            if row.mode == mode and row.n_workers == n:
                return row
        raise KeyError((mode, n))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "mode",
                    "workers",
                    "runtime_ms",
                    "relative_speedup",
                    "efficiency",
                    "absolute_speedup",
                    "final_loss",
                ]
            )
            for row in self.rows:
                writer.writerow(
                    [
                        row.mode,
                        row.n_workers,
                        f"{row.runtime_ms:.3f}",
                        _fmt(row.relative_speedup),
                        _fmt(row.efficiency),
                        _fmt(row.absolute_speedup),
                        repr(row.final_loss),
                    ]
                )


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def scaling_suite(
    exp: ExperimentConfig,
    worker_counts: list[int],
    modes: tuple[str, ...] = ("sync",),
    events_dir: str | None = None,
    time_sequential: bool = True,
) -> ScalingReport:
    """Run the full grid; S and E are computed against the sync T(1)."""
    results: list[tuple[str, int, ExperimentResult]] = []
    for mode in modes:
        for n in worker_counts:
            run = run_experiment(replace_mode(exp, mode), n)
            results.append((mode, n, run))
            if events_dir is not None:
                os.makedirs(events_dir, exist_ok=True)
                write_events_csv(
                    os.path.join(events_dir, f"events_{mode}_{n}.csv"), run.events
                )

    sequential_ms = None
    sequential_loss = None
    if time_sequential:
        vocab, _ = build_dataset(exp.corpus, exp.training)
        params = init_params(exp.training.model_config(len(vocab)), seed=exp.init_seed)
        t0 = time.monotonic()
        _, trace, _ = sequential_train(exp.training, exp.corpus, params)
        sequential_ms = (time.monotonic() - t0) * 1000.0
        sequential_loss = trace[-1] if trace else None

    baseline = None
    for mode, n, run in results:
        if n == 1 and baseline is None:
            baseline = run.runtime_ms
    rows = []
    for mode, n, run in results:
        relative = baseline / run.runtime_ms if baseline and run.runtime_ms > 0 else None
        rows.append(
            ScalingRow(
                mode=mode,
                n_workers=n,
                runtime_ms=run.runtime_ms,
                final_loss=run.final_loss,
                relative_speedup=relative,
                efficiency=relative / n if relative is not None else None,
                absolute_speedup=(
                    sequential_ms / run.runtime_ms
                    if sequential_ms is not None and run.runtime_ms > 0
                    else None
                ),
            )
        )
    return ScalingReport(rows=rows, sequential_ms=sequential_ms, sequential_loss=sequential_loss)


def replace_mode(exp: ExperimentConfig, mode: str) -> ExperimentConfig:
    return replace(exp, mode=mode)


def write_events_csv(path, events: list[RunEvent]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "task_id", "kind", "t_start_ms", "t_end_ms"])
        for event in sorted(events, key=lambda e: (e.worker_id, e.t_start)):
            writer.writerow(
                [event.worker_id, event.task_id, event.kind, f"{event.t_start:.3f}", f"{event.t_end:.3f}"]
            )


def read_events_csv(path) -> list[RunEvent]:
    events = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            events.append(
                RunEvent(
                    worker_id=row["worker_id"],
                    task_id=int(row["task_id"]),
                    kind=row["kind"],
                    t_start=float(row["t_start_ms"]),
                    t_end=float(row["t_end_ms"]),
                )
            )
    return events


def summarize_timeline(
    events: list[RunEvent], lifetimes: dict[str, tuple[float, float]] | None = None
) -> dict[str, dict]:
    """Per-worker busy time, utilization, and per-kind task counts.

    Lifetime defaults to the span of the worker's own events. Overlapping
    events for one worker violate the one-task-at-a-time contract.
    """
    by_worker: dict[str, list[RunEvent]] = {}
    for event in events:
        if event.t_end < event.t_start:
            raise MalformedEvents(f"negative duration: {event}")
        by_worker.setdefault(event.worker_id, []).append(event)

    out: dict[str, dict] = {}
    for worker_id, items in sorted(by_worker.items()):
        items.sort(key=lambda e: e.t_start)
        for before, after in zip(items, items[1:]):
            if after.t_start < before.t_end:
                raise MalformedEvents(
                    f"{worker_id}: overlapping events at {after.t_start}"
                )
        busy = sum(e.t_end - e.t_start for e in items)
        if lifetimes and worker_id in lifetimes:
            start, end = lifetimes[worker_id]
        else:
            start, end = items[0].t_start, items[-1].t_end
        lifetime = max(end - start, 0.0)
        kinds: dict[str, int] = {}
        for event in items:
            kinds[event.kind] = kinds.get(event.kind, 0) + 1
        out[worker_id] = {
            "busy_ms": busy,
            "lifetime_ms": lifetime,
            "utilization": busy / lifetime if lifetime > 0 else 0.0,
            "tasks": kinds,
        }
    return out
