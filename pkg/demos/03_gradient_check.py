"""Gradient check: backpropagation-through-time vs central differences.

Perturb every parameter of a tiny two-layer LSTM up and down, difference
the loss, and compare against the analytic gradient from one backward pass.
"""

import sys

sys.path.insert(0, "src")

import numpy as np

from crowdtrain.nn import (
    Batch,
    ModelConfig,
    backward,
    flatten,
    forward,
    init_params,
    loss,
    unflatten,
)

config = ModelConfig(vocab_size=5, hidden_units=3, num_layers=2, sample_length=4)
rng = np.random.default_rng(0)
batch = Batch(
    inputs=rng.integers(0, config.vocab_size, size=(2, config.sample_length)),
    targets=rng.integers(0, config.vocab_size, size=2),
)
params = init_params(config, seed=7)

logits, cache = forward(params, config, batch)
mean_loss, per_sample = loss(logits, batch.targets)
grads, loss_sum = backward(params, config, batch, cache)
analytic = flatten(grads)
print(f"model has {analytic.size} parameters, batch loss sum {loss_sum:.6f}")


def loss_sum_at(vec):
    p = unflatten(vec, config)
    lg, _ = forward(p, config, batch)
    _, per = loss(lg, batch.targets)
    return per.sum()


step = 3e-4
base = flatten(params)
numeric = np.zeros_like(base)
for i in range(base.size):
    up, down = base.copy(), base.copy()
    up[i] += step
    down[i] -= step
    numeric[i] = (loss_sum_at(up) - loss_sum_at(down)) / (2 * step)

rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
print(f"max relative error vs central differences: {rel.max():.3e}")
print(f"largest-magnitude gradient entries match: analytic {analytic[np.argmax(np.abs(analytic))]:+.6f}"
      f" vs numeric {numeric[np.argmax(np.abs(analytic))]:+.6f}")
assert rel.max() < 1e-4
print("gradient check passed at 1e-4")
