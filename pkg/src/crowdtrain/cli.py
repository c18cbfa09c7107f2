"""Command-line entry points: worker, bench, coordinator.

The worker joins a running job over TCP; bench drives the scaling suite
from a job config file; coordinator serves the broker + store over TCP and
WebSocket (the single-binary mode, or either role standalone).
"""

from __future__ import annotations

import argparse
import json
import sys

from .broker import Broker
from .client import RemoteBroker, RemoteDataStore, connect
from .datastore import DataStore
from .harness import ExperimentConfig, scaling_suite, write_events_csv
from .jobmodel import INITIAL_QUEUE
from .linsoftmax import LINEAR_SOFTMAX_KIND, run_linear_softmax
from .server import Coordinator
from .trainer import JobKnobs, TaskHandlers, TrainingConfig
from .worker import WorkerConfig, run_worker


def default_handlers() -> dict:
    table = TaskHandlers().table()
    table[LINEAR_SOFTMAX_KIND] = run_linear_softmax
    return table


def worker_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="worker", description="Join a job: fetch, execute, ack until done."
    )
    parser.add_argument("--id", required=True, dest="worker_id")
    parser.add_argument("--broker", required=True, help="host:port of the queue service")
    parser.add_argument("--store", required=True, help="host:port of the storage service")
    parser.add_argument("--queues", default=INITIAL_QUEUE, help="comma-separated poll order")
    parser.add_argument("--job", default=None, help="job id for completion detection")
    parser.add_argument("--max-tasks", type=int, default=None)
    parser.add_argument("--max-seconds", type=float, default=None)
    parser.add_argument("--backoff-ms", type=float, default=50.0)
    parser.add_argument("--events-out", default=None, help="write the event log CSV here")
    args = parser.parse_args(argv)

    broker_client = connect(args.broker)
    store_client = broker_client if args.store == args.broker else connect(args.store)
    config = WorkerConfig(
        worker_id=args.worker_id,
        queues=tuple(q for q in args.queues.split(",") if q),
        poll_backoff_ms=args.backoff_ms,
        max_tasks=args.max_tasks,
        max_wall_ms=None if args.max_seconds is None else args.max_seconds * 1000.0,
        job_id=args.job,
    )
    report = run_worker(
        RemoteBroker(broker_client),
        RemoteDataStore(store_client),
        config,
        default_handlers(),
    )
    if args.events_out:
        write_events_csv(args.events_out, report.events)
    print(
        json.dumps(
            {
                "worker_id": report.worker_id,
                "tasks_done": report.tasks_done,
                "tasks_failed": report.tasks_failed,
                "killed": report.killed,
            }
        )
    )
    return 0


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bench", description="Scaling suite: runtime/speedup/efficiency table."
    )
    parser.add_argument("--config", required=True, help="job config JSON file")
    parser.add_argument("--workers", default="1,2,4,8,16", help="comma-separated counts")
    parser.add_argument("--mode", default="sync", choices=["sync", "async", "both"])
    parser.add_argument("--latency-ms", default="0", help="fixed N, or LO..HI uniform")
    parser.add_argument("--seed", type=int, default=0, help="latency/churn seed")
    parser.add_argument("--out", default="report.csv")
    parser.add_argument("--events", default=None, help="directory for per-run event CSVs")
    args = parser.parse_args(argv)

    with open(args.config) as fh:
        raw = json.load(fh)
    exp = experiment_from_config(raw, latency_ms=_parse_latency(args.latency_ms), seed=args.seed)
    counts = [int(n) for n in args.workers.split(",") if n]
    modes = ("sync", "async") if args.mode == "both" else (args.mode,)
    report = scaling_suite(exp, counts, modes=modes, events_dir=args.events)
    report.to_csv(args.out)
    for row in report.rows:
        print(
            f"{row.mode:5s} n={row.n_workers:<3d} T={row.runtime_ms / 1000.0:8.2f}s "
            f"S={_opt(row.relative_speedup)} E={_opt(row.efficiency)} "
            f"A={_opt(row.absolute_speedup)} loss={row.final_loss:.4f}"
        )
    if report.sequential_ms is not None:
        print(f"sequential: {report.sequential_ms / 1000.0:8.2f}s loss={report.sequential_loss:.4f}")
    print(f"report written to {args.out}")
    return 0


def coordinator_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="coordinator", description="Serve the queue and/or store over TCP + WebSocket."
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--tcp-port", type=int, default=9200)
    parser.add_argument("--ws-port", type=int, default=9201)
    parser.add_argument("--no-tcp", action="store_true")
    parser.add_argument("--no-ws", action="store_true")
    parser.add_argument("--broker-only", action="store_true")
    parser.add_argument("--store-only", action="store_true")
    parser.add_argument("--sweep-ms", type=float, default=25.0)
    args = parser.parse_args(argv)

    coordinator = Coordinator(
        broker=None if args.store_only else Broker(),
        store=None if args.broker_only else DataStore(),
        host=args.host,
        tcp_port=None if args.no_tcp else args.tcp_port,
        ws_port=None if args.no_ws else args.ws_port,
        sweep_interval_ms=args.sweep_ms,
    )
    coordinator.start()
    print(
        json.dumps(
            {
                "tcp": list(coordinator.tcp_address) if coordinator.tcp_address else None,
                "ws": list(coordinator.ws_address) if coordinator.ws_address else None,
            }
        ),
        flush=True,
    )
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        coordinator.stop()
    return 0


def experiment_from_config(raw: dict, latency_ms=0.0, seed: int = 0) -> ExperimentConfig:
    """Build an ExperimentConfig from the job config JSON schema.

    Recognized keys: every TrainingConfig field, plus corpus (path) or
    corpus_size/corpus_seed for the synthetic corpus, init_seed, and any
    JobKnobs field.
    """
    training_fields = {
        k: raw[k]
        for k in (
            "batch_size",
            "minibatch_size",
            "minibatches_to_accumulate",
            "examples_per_epoch",
            "epochs",
            "learning_rate",
            "rms_decay",
            "rms_epsilon",
            "sample_length",
            "hidden_units",
            "num_layers",
            "shuffle_seed",
        )
        if k in raw
    }
    knob_fields = {
        k: raw[k]
        for k in (
            "map_lease_ms",
            "reduce_lease_ms",
            "result_lease_ms",
            "version_wait_timeout_ms",
            "results_wait_timeout_ms",
            "reduce_poll_ms",
            "map_delay_ms",
        )
        if k in raw
    }
    if "corpus" in raw:
        with open(raw["corpus"], encoding="utf-8") as fh:
            corpus = fh.read()
    else:
        from .corpus import synthetic_corpus

        corpus = synthetic_corpus(raw.get("corpus_size", 50_000), raw.get("corpus_seed", 7))
    return ExperimentConfig(
        training=TrainingConfig(**training_fields),
        corpus=corpus,
        init_seed=raw.get("init_seed", 0),
        knobs=JobKnobs(**knob_fields),
        latency_ms=latency_ms,
        latency_seed=seed,
    )


def _parse_latency(text: str):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return (float(lo), float(hi))
    return float(text)


def _opt(value) -> str:
    return "   -" if value is None else f"{value:6.2f}"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: crowdtrain {worker|bench|coordinator} [options]")
        return 0 if argv else 2
    command, rest = argv[0], argv[1:]
    if command == "worker":
        return worker_main(rest)
    if command == "bench":
        return bench_main(rest)
    if command == "coordinator":
        return coordinator_main(rest)
    print(f"unknown command {command!r}", file=sys.stderr)
    return 2
