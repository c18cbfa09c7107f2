"""Job planning and the map/reduce task handlers for data-parallel training.

A training run of E epochs over examples_per_epoch samples at batch size B
is E*examples_per_epoch/B optimizer steps. Step k (0-based) consists of K
map tasks — each computes the batch-summed gradient of one m-sample
mini-batch against model version k — and one reduce task that collects the
K results, sums them in ascending mini-batch order, applies a single RMSprop
update normalized by B, and installs model version k+1 with a compare-and-set
write.

That fixed accumulation order plus the CAS is what makes the distributed run
bit-identical to sequential_train below, no matter how many workers execute
it or how often leases expire and tasks replay.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass

import numpy as np

from .broker import Broker
from .datastore import DataStore
from .errors import (
    ConnectionLost,
    CorpusTooShort,
    JobInitFailed,
    TaskFailed,
    UnknownLease,
    VersionConflict,
    WaitTimeout,
)
from .jobmodel import (
    GradientResultMsg,
    JobSpec,
    TaskEnvelope,
    TASK_MAP,
    TASK_REDUCE,
    custom_kind,
    decode_result,
    encode_result,
)
from .nn import (
    Batch,
    ModelConfig,
    OptimizerState,
    backward,
    forward,
    pack_model,
    param_count,
    rmsprop_step,
    unpack_model,
)
from .nn.pack import gradient_from_bytes, gradient_to_bytes

RESULT_KIND = custom_kind("gradient-result")


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters of one run; mini-batch math must tile the batch."""

    batch_size: int = 128
    minibatch_size: int = 8
    minibatches_to_accumulate: int = 16
    examples_per_epoch: int = 2048
    epochs: int = 5
    learning_rate: float = 0.1
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-7
    sample_length: int = 40
    hidden_units: int = 50
    num_layers: int = 2
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.minibatches_to_accumulate * self.minibatch_size != self.batch_size:
            raise ValueError(
                "minibatches_to_accumulate * minibatch_size must equal batch_size"
            )
        if self.examples_per_epoch % self.batch_size != 0:
            raise ValueError("examples_per_epoch must be divisible by batch_size")

    @property
    def steps_per_epoch(self) -> int:
        return self.examples_per_epoch // self.batch_size

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            hidden_units=self.hidden_units,
            num_layers=self.num_layers,
            sample_length=self.sample_length,
        )

    def hyper(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "decay": self.rms_decay,
            "epsilon": self.rms_epsilon,
        }


@dataclass(frozen=True)
class JobKnobs:
    """Operational tuning for one job: lease windows, waits, fake compute."""

    map_lease_ms: int = 30_000
    reduce_lease_ms: int = 30_000
    result_lease_ms: int = 30_000
    version_wait_timeout_ms: int = 30_000
    results_wait_timeout_ms: int = 30_000
    reduce_poll_ms: float = 5.0
    map_delay_ms: float = 0.0


def build_dataset(corpus: str, config: TrainingConfig) -> tuple[str, np.ndarray]:
    """(vocab string, window-start table) for the whole run.

    Sample i is corpus[start : start+L] with the following character as the
    target. Starts are seeded-uniform, so the table is a pure function of
    (corpus, shuffle_seed, config).
    """
    length = config.sample_length
    if len(corpus) <= length + 1:
        raise CorpusTooShort(f"corpus of {len(corpus)} chars needs > {length + 1}")
    vocab = "".join(sorted(set(corpus)))
    total = config.epochs * config.examples_per_epoch
    rng = np.random.default_rng(np.random.SeedSequence(config.shuffle_seed))
    starts = rng.integers(0, len(corpus) - length, size=total, dtype=np.int64)
    return vocab, starts


def encode_corpus(corpus: str, vocab: str) -> np.ndarray:
    lookup = {ch: i for i, ch in enumerate(vocab)}
    return np.array([lookup[ch] for ch in corpus], dtype=np.int64)


def windows_to_batch(codes: np.ndarray, starts: np.ndarray, length: int) -> Batch:
    offsets = np.arange(length, dtype=np.int64)
    return Batch(
        inputs=codes[starts[:, None] + offsets],
        targets=codes[starts + length],
    )


@dataclass(frozen=True)
class JobPlan:
    job_id: str
    total_steps: int
    map_tasks: int
    reduce_tasks: int

    @property
    def total_tasks(self) -> int:
        return self.map_tasks + self.reduce_tasks


def plan_job(
    broker: Broker,
    store: DataStore,
    job: JobSpec,
    config: TrainingConfig,
    corpus: str,
    initial_params,
    knobs: JobKnobs = JobKnobs(),
) -> JobPlan:
    """Store model v0 + corpus + metadata and publish the full task graph."""
    vocab, starts = build_dataset(corpus, config)
    model_config = config.model_config(len(vocab))
    opt_state = OptimizerState.fresh(model_config, **_hyper_kwargs(config))
    blob = pack_model(initial_params, opt_state.cache, model_config, config.hyper())

    steps = config.total_steps
    k_acc = config.minibatches_to_accumulate
    m = config.minibatch_size
    try:
        for queue in (job.task_queue, job.results_queue):
            broker.ensure_queue(queue)
        store.put_plain(job.corpus_key, corpus.encode("utf-8"))
        store.put_plain(
            job.meta_key,
            json.dumps(
                {
                    "job_id": job.job_id,
                    "total_steps": steps,
                    "model_key": job.model_key,
                    "task_queue": job.task_queue,
                    "results_queue": job.results_queue,
                    "batch_size": config.batch_size,
                    "minibatches_to_accumulate": k_acc,
                },
                sort_keys=True,
            ).encode("utf-8"),
        )
        store.put_versioned(job.model_key, 0, blob)

        task_id = 0
        for step in range(steps):
            base = step * config.batch_size
            for j in range(k_acc):
                window = starts[base + j * m : base + (j + 1) * m]
                payload = json.dumps(
                    {
                        "job_id": job.job_id,
                        "step": step,
                        "minibatch_index": j,
                        "starts": [int(s) for s in window],
                        "model_key": job.model_key,
                        "corpus_key": job.corpus_key,
                        "results_queue": job.results_queue,
                        "version_wait_timeout_ms": knobs.version_wait_timeout_ms,
                        "result_lease_ms": knobs.result_lease_ms,
                        "map_delay_ms": knobs.map_delay_ms,
                    },
                    sort_keys=True,
                ).encode("utf-8")
                broker.publish(
                    job.task_queue,
                    TaskEnvelope(
                        task_id=task_id,
                        job_id=job.job_id,
                        kind=TASK_MAP,
                        payload=payload,
                        required_model_version=step,
                        max_duration_ms=knobs.map_lease_ms,
                    ),
                )
                task_id += 1
            payload = json.dumps(
                {
                    "job_id": job.job_id,
                    "step": step,
                    "k_accumulate": k_acc,
                    "batch_size": config.batch_size,
                    "model_key": job.model_key,
                    "results_queue": job.results_queue,
                    "loss_key": job.loss_key(step),
                    "version_wait_timeout_ms": knobs.version_wait_timeout_ms,
                    "results_wait_timeout_ms": knobs.results_wait_timeout_ms,
                    "reduce_poll_ms": knobs.reduce_poll_ms,
                },
                sort_keys=True,
            ).encode("utf-8")
            broker.publish(
                job.task_queue,
                TaskEnvelope(
                    task_id=task_id,
                    job_id=job.job_id,
                    kind=TASK_REDUCE,
                    payload=payload,
                    required_model_version=step,
                    max_duration_ms=knobs.reduce_lease_ms,
                ),
            )
            task_id += 1
    except (ConnectionLost, OSError) as exc:
        raise JobInitFailed(str(exc)) from exc

    return JobPlan(job.job_id, steps, steps * k_acc, steps)


class TaskHandlers:
    """map/reduce handler pair; create one instance per worker.

    Handlers receive (task, ctx) where ctx exposes .broker, .store,
    .checkpoint() (raises at a kill point) and .sleep_ms().
    """

    def __init__(self):
        self._corpus_cache: dict[str, tuple[str, np.ndarray]] = {}

    def table(self) -> dict:
        return {TASK_MAP: self.run_map, TASK_REDUCE: self.run_reduce}

    # -- map ---------------------------------------------------------------

    def run_map(self, task: TaskEnvelope, ctx) -> None:
        p = json.loads(task.payload.decode("utf-8"))
        step = p["step"]
        version, blob = _wait_version(
            ctx, p["model_key"], step, p["version_wait_timeout_ms"]
        )
        if version != step:
            # The step already completed (version moved past it), which can
            # only happen after a successful reduce consumed a full gradient
            # set; this replayed map has nothing left to contribute.
            return
        params, _, model_config, _ = unpack_model(blob)
        codes = self._codes(ctx, p["corpus_key"], model_config.vocab_size)
        batch = windows_to_batch(
            codes, np.asarray(p["starts"], dtype=np.int64), model_config.sample_length
        )
        logits, cache = forward(params, model_config, batch)
        grads, loss_sum = backward(params, model_config, batch, cache)
        grad_bytes = gradient_to_bytes(grads)
        if not np.isfinite(loss_sum) or not np.isfinite(
            np.frombuffer(grad_bytes, dtype="<f8")
        ).all():
            raise TaskFailed(f"non-finite gradient at step {step}")
        ctx.checkpoint()
        if p["map_delay_ms"] > 0:
            ctx.sleep_ms(p["map_delay_ms"])
        msg = GradientResultMsg(
            job_id=p["job_id"],
            model_version=step,
            minibatch_index=p["minibatch_index"],
            gradient=grad_bytes,
            loss_sum=loss_sum,
            example_count=len(batch),
        )
        ctx.broker.publish(
            p["results_queue"],
            TaskEnvelope(
                task_id=_result_task_id(step, p["minibatch_index"], task.delivery_count),
                job_id=p["job_id"],
                kind=RESULT_KIND,
                payload=encode_result(msg),
                required_model_version=step,
                max_duration_ms=p["result_lease_ms"],
            ),
        )
        ctx.checkpoint()

    def _codes(self, ctx, corpus_key: str, vocab_size: int) -> np.ndarray:
        cached = self._corpus_cache.get(corpus_key)
        if cached is None:
            corpus = ctx.store.get_plain(corpus_key).decode("utf-8")
            vocab = "".join(sorted(set(corpus)))
            cached = (vocab, encode_corpus(corpus, vocab))
            self._corpus_cache[corpus_key] = cached
        vocab, codes = cached
        if len(vocab) != vocab_size:
            raise TaskFailed(
                f"corpus vocab {len(vocab)} does not match model vocab {vocab_size}"
            )
        return codes

    # -- reduce ------------------------------------------------------------

    def run_reduce(self, task: TaskEnvelope, ctx) -> None:
        p = json.loads(task.payload.decode("utf-8"))
        step = p["step"]
        k_acc = p["k_accumulate"]
        version, blob = _wait_version(
            ctx, p["model_key"], step, p["version_wait_timeout_ms"]
        )
        if version > step:
            # A previous execution already installed step+1; only stale
            # result messages may be left behind. Drain what is pending.
            self._drain_stale(ctx, p["results_queue"], version)
            return

        # A raise anywhere below abandons the held leases: they expire and
        # the results (and this reduce task) get redelivered, which is the
        # no-ack-on-failure contract.
        held: dict[int, tuple[GradientResultMsg, str]] = {}
        parked: list[tuple[TaskEnvelope, str]] = []
        deadline = time.monotonic() + p["results_wait_timeout_ms"] / 1000.0
        while len(held) < k_acc:
            ctx.checkpoint()
            _require_live_lease(ctx, f"collecting results for step {step}")
            lease = ctx.broker.fetch(p["results_queue"], ctx.worker_id)
            if lease is None:
                if time.monotonic() >= deadline:
                    raise TaskFailed(
                        f"step {step}: {len(held)}/{k_acc} results before timeout"
                    )
                ctx.sleep_ms(p["reduce_poll_ms"])
                continue
            msg = decode_result(lease.task.payload)
            if msg.model_version == step and msg.minibatch_index not in held:
                held[msg.minibatch_index] = (msg, lease.lease_id)
            elif msg.model_version == step:
                _quiet_ack(ctx.broker, lease.lease_id)  # duplicate replay
            else:
                parked.append((lease.task, lease.lease_id))

        params, opt_cache, model_config, hyper = unpack_model(blob)
        state = OptimizerState(
            cache=opt_cache,
            learning_rate=hyper["learning_rate"],
            decay=hyper["decay"],
            epsilon=hyper["epsilon"],
        )
        count = param_count(model_config)
        total = np.zeros(count)
        loss_sum = 0.0
        for j in range(k_acc):
            msg, _ = held[j]
            total += gradient_from_bytes(msg.gradient, count)
            loss_sum += msg.loss_sum
        new_params, new_state = rmsprop_step(
            params, model_config, state,
            _as_gradients(total, model_config), p["batch_size"]
        )
        step_loss = loss_sum / p["batch_size"]
        if not np.isfinite(step_loss):
            raise TaskFailed(f"non-finite loss at step {step}")

        # Loss first: replays recompute the identical value, so the
        # write is idempotent even if we die before the CAS lands.
        ctx.store.put_plain(
            p["loss_key"],
            json.dumps(
                {
                    "step": step,
                    "loss": step_loss,
                    "model_version": step + 1,
                    "wall_ms": time.monotonic() * 1000.0,
                },
                sort_keys=True,
            ).encode("utf-8"),
        )
        ctx.checkpoint()
        new_blob = pack_model(new_params, new_state.cache, model_config, hyper)
        try:
            ctx.store.put_versioned(p["model_key"], step + 1, new_blob)
        except VersionConflict:
            pass  # another execution of this reduce won; same bytes
        for _, lease_id in held.values():
            _quiet_ack(ctx.broker, lease_id)
        for envelope, lease_id in parked:
            ctx.broker.publish(p["results_queue"], envelope)
            _quiet_ack(ctx.broker, lease_id)

    def _drain_stale(self, ctx, results_queue: str, current_version: int) -> None:
        """Single pass over pending results, dropping any for finished steps."""
        keep: list[tuple[TaskEnvelope, str]] = []
        pending, _ = ctx.broker.depth(results_queue)
        for _ in range(pending):
            lease = ctx.broker.fetch(results_queue, ctx.worker_id)
            if lease is None:
                break
            msg = decode_result(lease.task.payload)
            if msg.model_version < current_version:
                _quiet_ack(ctx.broker, lease.lease_id)
            else:
                keep.append((lease.task, lease.lease_id))
        for envelope, lease_id in keep:
            ctx.broker.publish(results_queue, envelope)
            _quiet_ack(ctx.broker, lease_id)


def _quiet_ack(broker, lease_id: str) -> None:
    try:
        broker.ack(lease_id)
    except UnknownLease:
        pass  # lease expired while we held it; the copy will be deduped


def _wait_version(ctx, key: str, min_version: int, timeout_ms: float):
    """Chunked wait_for_version honoring kill checkpoints and the lease."""
    deadline = time.monotonic() + timeout_ms / 1000.0
    while True:
        ctx.checkpoint()
        _require_live_lease(ctx, f"waiting for {key} v{min_version}")
        remaining_ms = (deadline - time.monotonic()) * 1000.0
        if remaining_ms <= 0:
            raise WaitTimeout(f"{key}: version {min_version} not reached")
        try:
            return ctx.store.wait_for_version(
                key, min_version, min(50.0, remaining_ms)
            )
        except WaitTimeout:
            continue


def _require_live_lease(ctx, doing: str) -> None:
    """Give up once our lease has expired: the task now belongs to someone
    else, and a zombie execution would only steal the leases it needs."""
    remaining = ctx.remaining_lease_ms() if hasattr(ctx, "remaining_lease_ms") else None
    if remaining is not None and remaining <= 0:
        raise TaskFailed(f"lease expired while {doing}")


def _result_task_id(step: int, minibatch_index: int, delivery_count: int) -> int:
    # unique per (step, mini-batch, execution) so replays never collide
    return (1 << 40) | (step << 20) | (minibatch_index << 8) | (delivery_count & 0xFF)


def _as_gradients(flat: np.ndarray, model_config: ModelConfig):
    from .nn import unflatten

    return unflatten(flat, model_config)


def _hyper_kwargs(config: TrainingConfig) -> dict:
    return {
        "learning_rate": config.learning_rate,
        "decay": config.rms_decay,
        "epsilon": config.rms_epsilon,
    }


# -- sequential baseline ----------------------------------------------------


def sequential_train(
    config: TrainingConfig,
    corpus: str,
    initial_params,
    loss_trace_out: list | None = None,
):
    """Single-process mini-batch training at batch size B.

    Accumulates each batch's gradient mini-batch by mini-batch in ascending
    order — the same arithmetic, in the same order, as the distributed
    reduce — so the two produce bit-identical parameter trajectories.
    """
    vocab, starts = build_dataset(corpus, config)
    model_config = config.model_config(len(vocab))
    codes = encode_corpus(corpus, vocab)
    params = initial_params
    state = OptimizerState.fresh(model_config, **_hyper_kwargs(config))
    count = param_count(model_config)
    m = config.minibatch_size
    trace: list[float] = []
    for step in range(config.total_steps):
        base = step * config.batch_size
        total = np.zeros(count)
        loss_sum = 0.0
        for j in range(config.minibatches_to_accumulate):
            window = starts[base + j * m : base + (j + 1) * m]
            batch = windows_to_batch(codes, window, config.sample_length)
            logits, cache = forward(params, model_config, batch)
            grads, batch_loss_sum = backward(params, model_config, batch, cache)
            total += gradient_from_bytes(gradient_to_bytes(grads), count)
            loss_sum += batch_loss_sum
        params, state = rmsprop_step(
            params, model_config, state, _as_gradients(total, model_config), config.batch_size
        )
        trace.append(loss_sum / config.batch_size)
    if loss_trace_out is not None:
        loss_trace_out.extend(trace)
    return params, trace, state


def collect_loss_trace(store: DataStore, job: JobSpec, total_steps: int) -> list[dict]:
    """Read back the per-step loss records a finished job left in the store."""
    rows = []
    for step in range(total_steps):
        raw = store.get_plain(job.loss_key(step))
        rows.append(json.loads(raw.decode("utf-8")))
    return rows


def write_loss_trace_csv(path, rows: list[dict], config: TrainingConfig) -> None:
    """CSV with columns step,epoch,loss,model_version,wall_ms."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss", "model_version", "wall_ms"])
        for row in rows:
            writer.writerow(
                [
                    row["step"],
                    row["step"] // config.steps_per_epoch,
                    repr(row["loss"]),
                    row["model_version"],
                    row["wall_ms"],
                ]
            )
