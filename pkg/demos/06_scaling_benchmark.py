"""Scaling behavior: runtime, speedup, and the reduce barrier.

With K mini-batches per optimizer step, at most K maps run in parallel;
adding workers beyond K only overlaps the wait for the next version.
A 100ms artificial compute delay per map makes the effect visible on one
machine. Writes report.csv, per-run event logs, and a loss trace CSV.
"""

import sys

sys.path.insert(0, "src")

import os

from crowdtrain.corpus import synthetic_code_corpus
from crowdtrain.harness import ExperimentConfig, run_experiment, scaling_suite
from crowdtrain.trainer import JobKnobs, TrainingConfig, write_loss_trace_csv

K = 8
training = TrainingConfig(
    batch_size=32,
    minibatch_size=4,
    minibatches_to_accumulate=K,
    examples_per_epoch=160,
    epochs=1,
    sample_length=10,
    hidden_units=4,
    num_layers=1,
    shuffle_seed=5,
)
exp = ExperimentConfig(
    training=training,
    corpus=synthetic_code_corpus(6_000, seed=3),
    init_seed=2,
    knobs=JobKnobs(map_delay_ms=100.0, reduce_poll_ms=2.0),
    worker_poll_backoff_ms=2.0,
)

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

counts = [1, 2, 4, 8, 16]
print(f"K = {K} mini-batches per step; testing n = {counts} (barrier at {K})")
report = scaling_suite(exp, counts, events_dir=os.path.join(out_dir, "events"))

print(f"\n{'n':>3} {'runtime':>10} {'speedup':>8} {'efficiency':>10}")
for row in report.rows:
    print(f"{row.n_workers:>3} {row.runtime_ms / 1000:>9.2f}s "
          f"{row.relative_speedup:>8.2f} {row.efficiency:>10.3f}")
print(f"\nall rows trained to the same loss: "
      f"{len({row.final_loss for row in report.rows}) == 1} "
      f"({report.rows[0].final_loss:.4f})")
print(f"sequential reference: {report.sequential_ms:.0f}ms "
      f"(no queue, no delay injection)")

report.to_csv(os.path.join(out_dir, "report.csv"))
run = run_experiment(exp, 4)
write_loss_trace_csv(os.path.join(out_dir, "loss_trace.csv"), run.loss_rows, training)
print(f"wrote {out_dir}/report.csv, {out_dir}/loss_trace.csv, {out_dir}/events/")
