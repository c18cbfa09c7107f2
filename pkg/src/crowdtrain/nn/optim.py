"""RMSprop over the flattened parameter vector.

The gradient handed in is batch-summed; ``effective_batch`` turns it into
the mean gradient before the update, so the caller controls where the
normalization happens (once per full batch, never per mini-batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from .model import Gradients, ModelConfig, ModelParams
from .pack import flatten, param_count, unflatten


@dataclass(frozen=True)
class OptimizerState:
    cache: np.ndarray  # running mean of squared gradients, flat
    learning_rate: float = 0.1
    decay: float = 0.9
    epsilon: float = 1e-7

    @classmethod
    def fresh(
        cls,
        config: ModelConfig,
        learning_rate: float = 0.1,
        decay: float = 0.9,
        epsilon: float = 1e-7,
    ) -> "OptimizerState":
        return cls(np.zeros(param_count(config)), learning_rate, decay, epsilon)


def rmsprop_step(
    params: ModelParams,
    config: ModelConfig,
    state: OptimizerState,
    grads: Gradients,
    effective_batch: int,
) -> tuple[ModelParams, OptimizerState]:
    """One optimizer update; returns new (params, state), inputs untouched."""
    if effective_batch <= 0:
        raise ValueError("effective_batch must be > 0")
    pv = flatten(params)
    gv = flatten(grads)
    if pv.shape != gv.shape or pv.shape != state.cache.shape:
        raise ShapeMismatch(
            f"params {pv.shape}, grads {gv.shape}, cache {state.cache.shape}"
        )
    g = gv / float(effective_batch)
    cache = state.decay * state.cache + (1.0 - state.decay) * g * g
    new_pv = pv - state.learning_rate * g / (np.sqrt(cache) + state.epsilon)
    new_state = OptimizerState(cache, state.learning_rate, state.decay, state.epsilon)
    return unflatten(new_pv, config), new_state
