"""Stacked LSTM with a dense softmax head, forward and full BPTT backward.

All math is float64 and purely functional: given identical inputs, forward
and backward are bit-reproducible on one machine, which the distributed
equivalence guarantee rests on. Gate blocks inside every 4H-wide tensor are
ordered (input, forget, cell, output); serialization depends on that order.

The backward pass returns gradients SUMMED over the batch, not averaged.
Dividing by the full batch size happens once, at the optimizer step, so
accumulating K mini-batch gradients is algebraically the same as one big
batch gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import IndexOutOfRange, ShapeMismatch


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_units: int = 50
    num_layers: int = 2
    sample_length: int = 40

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if min(self.hidden_units, self.num_layers, self.sample_length) < 1:
            raise ValueError("hidden_units, num_layers, sample_length must be positive")


@dataclass
class LayerParams:
    kernel: np.ndarray     # [in_dim, 4H]
    recurrent: np.ndarray  # [H, 4H]
    bias: np.ndarray       # [4H]


@dataclass
class ModelParams:
    layers: list[LayerParams]
    out_kernel: np.ndarray  # [H, V]
    out_bias: np.ndarray    # [V]


# Gradients mirror the parameter layout one-for-one.
Gradients = ModelParams


@dataclass(frozen=True)
class Sample:
    indices: np.ndarray  # [L] character indices
    target: int


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray   # [N, L] int64
    targets: np.ndarray  # [N] int64

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Batch":
        if not samples:
            raise ShapeMismatch("batch must be non-empty")
        return cls(
            inputs=np.stack([np.asarray(s.indices, dtype=np.int64) for s in samples]),
            targets=np.array([s.target for s in samples], dtype=np.int64),
        )

    def __len__(self) -> int:
        return self.inputs.shape[0]


def expected_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed (name, shape) table; the flatten layout follows this order."""
    h, v = config.hidden_units, config.vocab_size
    table: list[tuple[str, tuple[int, ...]]] = []
    for layer in range(config.num_layers):
        in_dim = v if layer == 0 else h
        table.append((f"lstm{layer}.kernel", (in_dim, 4 * h)))
        table.append((f"lstm{layer}.recurrent", (h, 4 * h)))
        table.append((f"lstm{layer}.bias", (4 * h,)))
    table.append(("out.kernel", (h, v)))
    table.append(("out.bias", (v,)))
    return table


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic random init: Glorot-uniform kernels, 1/sqrt(H)-uniform
    recurrent kernels, zero biases except the forget gate at 1.0."""
    h, v = config.hidden_units, config.vocab_size
    streams = np.random.SeedSequence(seed).spawn(config.num_layers + 1)
    layers = []
    for layer in range(config.num_layers):
        rng = np.random.default_rng(streams[layer])
        in_dim = v if layer == 0 else h
        limit = np.sqrt(6.0 / (in_dim + 4 * h))
        kernel = rng.uniform(-limit, limit, size=(in_dim, 4 * h))
        rlimit = 1.0 / np.sqrt(h)
        recurrent = rng.uniform(-rlimit, rlimit, size=(h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0
        layers.append(LayerParams(kernel, recurrent, bias))
    rng = np.random.default_rng(streams[config.num_layers])
    limit = np.sqrt(6.0 / (h + v))
    out_kernel = rng.uniform(-limit, limit, size=(h, v))
    out_bias = np.zeros(v)
    return ModelParams(layers, out_kernel, out_bias)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class _LayerCache:
    xin: np.ndarray  # [L, N, in_dim]
    i: np.ndarray    # [L, N, H]
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    hc: np.ndarray   # tanh(c)
    h: np.ndarray


@dataclass
class ForwardCache:
    layers: list[_LayerCache]
    logits: np.ndarray  # [N, V]


def _check_model(params: ModelParams, config: ModelConfig) -> None:
    table = expected_shapes(config)
    actual = []
    for layer, lp in enumerate(params.layers):
        actual.append((f"lstm{layer}.kernel", lp.kernel.shape))
        actual.append((f"lstm{layer}.recurrent", lp.recurrent.shape))
        actual.append((f"lstm{layer}.bias", lp.bias.shape))
    actual.append(("out.kernel", params.out_kernel.shape))
    actual.append(("out.bias", params.out_bias.shape))
    if actual != table:
        raise ShapeMismatch(f"params do not match config: {actual} vs {table}")


def forward(params: ModelParams, config: ModelConfig, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the net over the window; return per-sample logits and the
    activations backward needs."""
    _check_model(params, config)
    inputs, n = batch.inputs, len(batch)
    l, h, v = config.sample_length, config.hidden_units, config.vocab_size
    if n == 0:
        raise ShapeMismatch("batch must be non-empty")
    if inputs.ndim != 2 or inputs.shape[1] != l:
        raise ShapeMismatch(f"inputs must be [N, {l}], got {inputs.shape}")
    if batch.targets.shape != (n,):
        raise ShapeMismatch(f"targets must be [{n}], got {batch.targets.shape}")
    if inputs.min() < 0 or inputs.max() >= v:
        raise ShapeMismatch("input indices out of vocabulary range")

    onehot = np.zeros((l, n, v))
    onehot[np.arange(l)[:, None], np.arange(n)[None, :], inputs.T] = 1.0

    caches: list[_LayerCache] = []
    xin = onehot
    for lp in params.layers:
        i = np.empty((l, n, h))
        f = np.empty((l, n, h))
        g = np.empty((l, n, h))
        o = np.empty((l, n, h))
        c = np.empty((l, n, h))
        hc = np.empty((l, n, h))
        hs = np.empty((l, n, h))
        h_prev = np.zeros((n, h))
        c_prev = np.zeros((n, h))
        for t in range(l):
            z = xin[t] @ lp.kernel + h_prev @ lp.recurrent + lp.bias
            i[t] = expit(z[:, :h])
            f[t] = expit(z[:, h : 2 * h])
            g[t] = np.tanh(z[:, 2 * h : 3 * h])
            o[t] = expit(z[:, 3 * h :])
            c[t] = f[t] * c_prev + i[t] * g[t]
            hc[t] = np.tanh(c[t])
            hs[t] = o[t] * hc[t]
            h_prev, c_prev = hs[t], c[t]
        caches.append(_LayerCache(xin, i, f, g, o, c, hc, hs))
        xin = hs

    logits = caches[-1].h[-1] @ params.out_kernel + params.out_bias
    return logits, ForwardCache(caches, logits)


def loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Categorical cross-entropy: (mean over batch, per-sample losses)."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch("need one target per logit row")
    v = logits.shape[1]
    if targets.min() < 0 or targets.max() >= v:
        raise IndexOutOfRange(f"targets must be in [0, {v})")
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    per_sample = lse - logits[np.arange(logits.shape[0]), targets]
    return float(per_sample.mean()), per_sample


def backward(
    params: ModelParams, config: ModelConfig, batch: Batch, cache: ForwardCache
) -> tuple[Gradients, float]:
    """Backpropagation through time; gradients summed over the batch.

    Returns (gradients, sum of per-sample losses).
    """
    _check_model(params, config)
    n = len(batch)
    l, h = config.sample_length, config.hidden_units
    logits = cache.logits
    _, per_sample = loss(logits, batch.targets)
    loss_sum = float(per_sample.sum())

    dlogits = softmax(logits)
    dlogits[np.arange(n), batch.targets] -= 1.0

    top = cache.layers[-1]
    d_out_kernel = top.h[-1].T @ dlogits
    d_out_bias = dlogits.sum(axis=0)

    # dh flowing into each layer's hidden sequence from above
    dh_seq = np.zeros((l, n, h))
    dh_seq[-1] = dlogits @ params.out_kernel.T

    grad_layers: list[LayerParams] = [None] * len(params.layers)  # type: ignore[list-item]
    for layer in range(len(params.layers) - 1, -1, -1):
        lp = params.layers[layer]
        lc = cache.layers[layer]
        in_dim = lp.kernel.shape[0]
        d_kernel = np.zeros_like(lp.kernel)
        d_recurrent = np.zeros_like(lp.recurrent)
        d_bias = np.zeros_like(lp.bias)
        dx_seq = np.zeros((l, n, in_dim)) if layer > 0 else None
        dh_carry = np.zeros((n, h))
        dc_carry = np.zeros((n, h))
        for t in range(l - 1, -1, -1):
            dh = dh_seq[t] + dh_carry
            do = dh * lc.hc[t]
            dc = dc_carry + dh * lc.o[t] * (1.0 - lc.hc[t] ** 2)
            di = dc * lc.g[t]
            dg = dc * lc.i[t]
            c_prev = lc.c[t - 1] if t > 0 else np.zeros((n, h))
            df = dc * c_prev
            dz = np.concatenate(
                [
                    di * lc.i[t] * (1.0 - lc.i[t]),
                    df * lc.f[t] * (1.0 - lc.f[t]),
                    dg * (1.0 - lc.g[t] ** 2),
                    do * lc.o[t] * (1.0 - lc.o[t]),
                ],
                axis=1,
            )
            d_kernel += lc.xin[t].T @ dz
            h_prev = lc.h[t - 1] if t > 0 else np.zeros((n, h))
            d_recurrent += h_prev.T @ dz
            d_bias += dz.sum(axis=0)
            if dx_seq is not None:
                dx_seq[t] = dz @ lp.kernel.T
            dh_carry = dz @ lp.recurrent.T
            dc_carry = dc * lc.f[t]
        grad_layers[layer] = LayerParams(d_kernel, d_recurrent, d_bias)
        if dx_seq is not None:
            dh_seq = dx_seq

    return ModelParams(grad_layers, d_out_kernel, d_out_bias), loss_sum
