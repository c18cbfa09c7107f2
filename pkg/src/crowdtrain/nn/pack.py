"""Flattening and byte-level serialization of model + optimizer state.

The flat layout is the fixed table from expected_shapes(); its checksum is
embedded in every serialized model so two processes can verify they agree on
the byte order before trusting a blob. The blob format is one JSON header
line followed by the raw little-endian float64 parameter vector and cache
vector — the exact payload the datastore holds and the wire carries.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import LengthMismatch, MalformedEnvelope
from .model import Gradients, LayerParams, ModelConfig, ModelParams, expected_shapes

_FORMAT = "crowdtrain-model"
_FORMAT_VERSION = 1


def layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    return expected_shapes(config)


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in layout(config))


def layout_checksum(config: ModelConfig) -> str:
    text = "|".join(f"{name}:{shape}" for name, shape in layout(config))
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


def flatten(params: ModelParams | Gradients) -> np.ndarray:
    parts = []
    for lp in params.layers:
        parts.extend([lp.kernel.ravel(), lp.recurrent.ravel(), lp.bias.ravel()])
    parts.extend([params.out_kernel.ravel(), params.out_bias.ravel()])
    return np.concatenate(parts)


def unflatten(vec: np.ndarray, config: ModelConfig) -> ModelParams:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != param_count(config):
        raise LengthMismatch(f"expected length {param_count(config)}, got {vec.shape}")
    tensors = []
    offset = 0
    for _, shape in layout(config):
        size = int(np.prod(shape))
        tensors.append(vec[offset : offset + size].reshape(shape).copy())
        offset += size
    layers = [LayerParams(*tensors[3 * i : 3 * i + 3]) for i in range(config.num_layers)]
    return ModelParams(layers, tensors[-2], tensors[-1])


def _to_bytes(vec: np.ndarray) -> bytes:
    return np.ascontiguousarray(vec, dtype="<f8").tobytes()


def _from_bytes(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f8").copy()


def pack_model(params: ModelParams, opt_cache: np.ndarray, config: ModelConfig, hyper: dict) -> bytes:
    """Serialize (params, optimizer cache, config, hyperparameters) to bytes."""
    count = param_count(config)
    if opt_cache.shape != (count,):
        raise LengthMismatch(f"optimizer cache must have length {count}")
    header = {
        "fmt": _FORMAT,
        "fmt_version": _FORMAT_VERSION,
        "config": {
            "vocab_size": config.vocab_size,
            "hidden_units": config.hidden_units,
            "num_layers": config.num_layers,
            "sample_length": config.sample_length,
        },
        "layout": layout_checksum(config),
        "param_count": count,
        "hyper": hyper,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return head + b"\n" + flatten(params).astype("<f8").tobytes() + _to_bytes(opt_cache)


def unpack_model(blob: bytes) -> tuple[ModelParams, np.ndarray, ModelConfig, dict]:
    """Inverse of pack_model; validates format, layout checksum, and length."""
    sep = blob.find(b"\n")
    if sep < 0:
        raise MalformedEnvelope("model blob has no header line")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedEnvelope(f"bad model header: {exc}") from exc
    if not isinstance(header, dict) or header.get("fmt") != _FORMAT:
        raise MalformedEnvelope("not a model blob")
    try:
        cfg = header["config"]
        config = ModelConfig(
            vocab_size=cfg["vocab_size"],
            hidden_units=cfg["hidden_units"],
            num_layers=cfg["num_layers"],
            sample_length=cfg["sample_length"],
        )
        count = int(header["param_count"])
        hyper = dict(header["hyper"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedEnvelope(f"bad model header fields: {exc}") from exc
    if header.get("layout") != layout_checksum(config):
        raise MalformedEnvelope("layout checksum mismatch")
    if count != param_count(config):
        raise MalformedEnvelope("param_count disagrees with config")
    body = blob[sep + 1 :]
    if len(body) != 2 * 8 * count:
        raise MalformedEnvelope(f"model body has {len(body)} bytes, expected {16 * count}")
    pv = _from_bytes(body[: 8 * count])
    cache = _from_bytes(body[8 * count :])
    return unflatten(pv, config), cache, config, hyper


def gradient_to_bytes(grads: Gradients) -> bytes:
    return flatten(grads).astype("<f8").tobytes()


def gradient_from_bytes(raw: bytes, count: int) -> np.ndarray:
    vec = _from_bytes(raw)
    if vec.shape != (count,):
        raise LengthMismatch(f"gradient has {vec.shape[0]} entries, expected {count}")
    return vec
