"""Task vocabulary shared by the queue, the workers, and the planner.

Everything here is a plain value type with a deterministic JSON wire form:
an envelope (or result message) encodes to one self-describing JSON object
with binary fields base64-encoded, so native processes and browser clients
parse identical frames.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
from dataclasses import dataclass, replace

from .errors import MalformedEnvelope

INITIAL_QUEUE = "InitialQueue"
MAP_RESULTS_QUEUE = "MapResultsQueue"

TASK_MAP = "map"
TASK_REDUCE = "reduce"

DEFAULT_MAX_DURATION_MS = 30_000

_KIND_RE = re.compile(r"^(map|reduce|custom:.+)$")


def custom_kind(name: str) -> str:
    """Kind string for a job-defined task type handled by name."""
    if not name:
        raise ValueError("custom kind needs a non-empty name")
    return f"custom:{name}"


@dataclass(frozen=True)
class TaskEnvelope:
    """One unit of distributable work.

    ``required_model_version`` is the model version the task's computation
    targets; ``max_duration_ms`` is the visibility timeout after which an
    unacknowledged lease is redelivered.
    """

    task_id: int
    job_id: str
    kind: str
    payload: bytes
    required_model_version: int
    delivery_count: int = 0
    max_duration_ms: int = DEFAULT_MAX_DURATION_MS

    def __post_init__(self) -> None:
        if not (0 <= self.task_id < 2**64):
            raise ValueError(f"task_id out of 64-bit range: {self.task_id}")
        if not self.job_id:
            raise ValueError("job_id must be non-empty")
        if not _KIND_RE.match(self.kind):
            raise ValueError(f"bad task kind: {self.kind!r}")
        if not isinstance(self.payload, bytes):
            raise ValueError("payload must be bytes")
        if self.required_model_version < 0:
            raise ValueError("required_model_version must be >= 0")
        if self.delivery_count < 0:
            raise ValueError("delivery_count must be >= 0")
        if self.max_duration_ms <= 0:
            raise ValueError("max_duration_ms must be > 0")

    def delivered(self) -> "TaskEnvelope":
        """Copy with delivery_count bumped by one (new lease issued)."""
        return replace(self, delivery_count=self.delivery_count + 1)


_ENVELOPE_FIELDS = frozenset(
    {
        "task_id",
        "job_id",
        "kind",
        "payload_b64",
        "required_model_version",
        "delivery_count",
        "max_duration_ms",
    }
)


def envelope_to_dict(t: TaskEnvelope) -> dict:
    return {
        "task_id": t.task_id,
        "job_id": t.job_id,
        "kind": t.kind,
        "payload_b64": base64.b64encode(t.payload).decode("ascii"),
        "required_model_version": t.required_model_version,
        "delivery_count": t.delivery_count,
        "max_duration_ms": t.max_duration_ms,
    }


def envelope_from_dict(obj: object) -> TaskEnvelope:
    if not isinstance(obj, dict) or set(obj) != _ENVELOPE_FIELDS:
        raise MalformedEnvelope("envelope object has wrong field set")
    try:
        payload = base64.b64decode(obj["payload_b64"], validate=True)
        t = TaskEnvelope(
            task_id=_as_int(obj["task_id"]),
            job_id=_as_str(obj["job_id"]),
            kind=_as_str(obj["kind"]),
            payload=payload,
            required_model_version=_as_int(obj["required_model_version"]),
            delivery_count=_as_int(obj["delivery_count"]),
            max_duration_ms=_as_int(obj["max_duration_ms"]),
        )
    except (ValueError, TypeError, KeyError, binascii.Error) as exc:
        raise MalformedEnvelope(str(exc)) from exc
    return t


def encode_envelope(t: TaskEnvelope) -> bytes:
    """Deterministic, self-describing serialization; pure in the value."""
    return _dumps(envelope_to_dict(t))


def decode_envelope(b: bytes) -> TaskEnvelope:
    return envelope_from_dict(_loads(b))


@dataclass(frozen=True)
class GradientResultMsg:
    """A map task's output: one mini-batch gradient pinned to a model version.

    ``gradient`` is the serialized flat gradient vector (little-endian
    float64); ``loss_sum`` is the sum of per-example losses over the
    mini-batch.
    """

    job_id: str
    model_version: int
    minibatch_index: int
    gradient: bytes
    loss_sum: float
    example_count: int

    def __post_init__(self) -> None:
        if self.model_version < 0:
            raise ValueError("model_version must be >= 0")
        if self.minibatch_index < 0:
            raise ValueError("minibatch_index must be >= 0")
        if self.example_count <= 0:
            raise ValueError("example_count must be > 0")
        if not isinstance(self.gradient, bytes):
            raise ValueError("gradient must be bytes")


_RESULT_FIELDS = frozenset(
    {
        "job_id",
        "model_version",
        "minibatch_index",
        "gradient_b64",
        "loss_sum",
        "example_count",
    }
)


def encode_result(msg: GradientResultMsg) -> bytes:
    return _dumps(
        {
            "job_id": msg.job_id,
            "model_version": msg.model_version,
            "minibatch_index": msg.minibatch_index,
            "gradient_b64": base64.b64encode(msg.gradient).decode("ascii"),
            "loss_sum": msg.loss_sum,
            "example_count": msg.example_count,
        }
    )


def decode_result(b: bytes) -> GradientResultMsg:
    obj = _loads(b)
    if not isinstance(obj, dict) or set(obj) != _RESULT_FIELDS:
        raise MalformedEnvelope("result message has wrong field set")
    try:
        return GradientResultMsg(
            job_id=_as_str(obj["job_id"]),
            model_version=_as_int(obj["model_version"]),
            minibatch_index=_as_int(obj["minibatch_index"]),
            gradient=base64.b64decode(obj["gradient_b64"], validate=True),
            loss_sum=float(obj["loss_sum"]),
            example_count=_as_int(obj["example_count"]),
        )
    except (ValueError, TypeError, binascii.Error) as exc:
        raise MalformedEnvelope(str(exc)) from exc


@dataclass(frozen=True)
class JobSpec:
    """Planning-side description of one job: queues, keys, and knobs.

    The training configuration itself lives in trainer.TrainingConfig; this
    type only carries what the planner and handlers need to find each other.
    """

    job_id: str
    task_queue: str = INITIAL_QUEUE
    results_queue: str = MAP_RESULTS_QUEUE
    broker_endpoint: str = "local"
    store_endpoint: str = "local"

    @property
    def model_key(self) -> str:
        return f"{self.job_id}:model"

    @property
    def corpus_key(self) -> str:
        return f"{self.job_id}:corpus"

    @property
    def meta_key(self) -> str:
        return f"{self.job_id}:meta"

    def loss_key(self, step: int) -> str:
        return f"{self.job_id}:loss:{step}"


def _dumps(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _loads(b: bytes) -> object:
    try:
        return json.loads(b.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedEnvelope(f"not a JSON frame: {exc}") from exc


def _as_int(v: object) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected integer, got {type(v).__name__}")
    return v


def _as_str(v: object) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected string, got {type(v).__name__}")
    return v
