"""Churn demo: kill half the fleet mid-job and get the identical model.

Killed workers vanish without acking; their leases expire, the broker
redelivers, and survivors replay the work. Duplicate gradients are deduped
by mini-batch index and duplicate model updates lose the compare-and-set,
so the final bytes cannot drift.
"""

import sys

sys.path.insert(0, "src")

from crowdtrain.corpus import synthetic_code_corpus
from crowdtrain.harness import ExperimentConfig, random_kill_schedule, run_experiment
from crowdtrain.trainer import JobKnobs, TrainingConfig

training = TrainingConfig(
    batch_size=32,
    minibatch_size=4,
    minibatches_to_accumulate=8,
    examples_per_epoch=128,
    epochs=2,
    sample_length=24,
    hidden_units=12,
    num_layers=2,
    shuffle_seed=1,
)
exp = ExperimentConfig(
    training=training,
    corpus=synthetic_code_corpus(12_000, seed=4),
    init_seed=9,
    knobs=JobKnobs(
        map_lease_ms=600,
        reduce_lease_ms=2500,
        result_lease_ms=2500,
        results_wait_timeout_ms=2000,
        map_delay_ms=20.0,
    ),
)

print("running the no-failure baseline with 8 workers...")
baseline = run_experiment(exp, 8)
print(f"baseline: {baseline.runtime_ms:.0f}ms, final loss {baseline.final_loss:.4f}")

churn = random_kill_schedule(
    8, kill_fraction=0.5, window_ms=(50.0, baseline.runtime_ms), seed=23
)
for entry in churn:
    if entry.leave_mode == "kill":
        print(f"  {entry.worker_id} will be killed at t={entry.leave_at_ms:.0f}ms")

print("running the same job under churn...")
churned = run_experiment(exp, 8, churn=churn)
killed = [r.worker_id for r in churned.reports if r.killed]
print(f"churned: {churned.runtime_ms:.0f}ms (redelivery costs time), "
      f"killed mid-run: {sorted(killed)}")
print("final model bit-identical to baseline:", churned.model_blob == baseline.model_blob)
print("loss traces identical:",
      [r["loss"] for r in churned.loss_rows] == [r["loss"] for r in baseline.loss_rows])
