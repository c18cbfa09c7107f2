"""Neural-network core: stacked LSTM + softmax model, RMSprop, serialization."""

from .model import (
    Batch,
    Gradients,
    LayerParams,
    ModelConfig,
    ModelParams,
    Sample,
    backward,
    forward,
    init_params,
    loss,
    softmax,
)
from .optim import OptimizerState, rmsprop_step
from .pack import (
    flatten,
    layout,
    layout_checksum,
    pack_model,
    param_count,
    unflatten,
    unpack_model,
)

__all__ = [
    "Batch",
    "Gradients",
    "LayerParams",
    "ModelConfig",
    "ModelParams",
    "OptimizerState",
    "Sample",
    "backward",
    "flatten",
    "forward",
    "init_params",
    "layout",
    "layout_checksum",
    "loss",
    "pack_model",
    "param_count",
    "rmsprop_step",
    "softmax",
    "unflatten",
    "unpack_model",
]
