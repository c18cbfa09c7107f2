"""The core claim, demonstrated: a worker fleet pulling map/reduce tasks
from the queue trains the exact same model as a single sequential loop.

Map tasks compute batch-summed mini-batch gradients pinned to a model
version; the reduce task sums them in a fixed order and makes one optimizer
update. Because that arithmetic matches the sequential loop operation for
operation, the final parameter vectors are bit-identical, not just close.
"""

import sys

sys.path.insert(0, "src")

import numpy as np

from crowdtrain.corpus import synthetic_code_corpus
from crowdtrain.harness import ExperimentConfig, run_experiment
from crowdtrain.nn import flatten, init_params, unpack_model
from crowdtrain.trainer import TrainingConfig, build_dataset, sequential_train

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
corpus = synthetic_code_corpus(12_000, seed=4)
vocab, _ = build_dataset(corpus, training)
print(f"corpus: {len(corpus)} chars, vocab {len(vocab)}; "
      f"{training.total_steps} optimizer steps of batch {training.batch_size}")

params = init_params(training.model_config(len(vocab)), seed=9)
seq_params, seq_trace, _ = sequential_train(training, corpus, params)
print("sequential loss trace:", " ".join(f"{x:.4f}" for x in seq_trace))

for n_workers in (1, 4):
    run = run_experiment(
        ExperimentConfig(training=training, corpus=corpus, init_seed=9), n_workers
    )
    dist_params, _, _, _ = unpack_model(run.model_blob)
    dist_trace = [row["loss"] for row in run.loss_rows]
    print(f"\n{n_workers} worker(s): runtime {run.runtime_ms:.0f}ms")
    print("distributed loss trace:", " ".join(f"{x:.4f}" for x in dist_trace))
    print("loss traces identical: ", dist_trace == seq_trace)
    print("parameter vectors bit-identical:",
          np.array_equal(flatten(dist_params), flatten(seq_params)))
