"""crowdtrain: a work-queue compute fabric with a versioned model store,
demonstrated on data-parallel character-LSTM training.

The pieces: a broker of named task queues with lease-based at-least-once
delivery, a key-value store with compare-and-set model versioning, a worker
loop that executes map/reduce handlers, a planner that turns a training run
into a task graph, and a harness that measures speedup/efficiency under
worker churn. Everything speaks one newline-framed JSON protocol over TCP or
WebSocket, so native processes and browser pages can join the same job.
"""

from .broker import Broker, BrokerSweeper, Lease, ManualClock
from .datastore import DataStore
from .jobmodel import (
    GradientResultMsg,
    JobSpec,
    TaskEnvelope,
    custom_kind,
    decode_envelope,
    decode_result,
    encode_envelope,
    encode_result,
)

__all__ = [
    "Broker",
    "BrokerSweeper",
    "DataStore",
    "GradientResultMsg",
    "JobSpec",
    "Lease",
    "ManualClock",
    "TaskEnvelope",
    "custom_kind",
    "decode_envelope",
    "decode_result",
    "encode_envelope",
    "encode_result",
]

__version__ = "0.1.0"
