"""Error types shared across the queue, store, network, and training layers.

Each error carries a stable ``code`` string that doubles as the wire-level
error identifier, so exceptions survive a round trip through the framed-JSON
protocol.
"""

from __future__ import annotations


class CrowdtrainError(Exception):
    code = "Error"


class MalformedEnvelope(CrowdtrainError):
    code = "MalformedEnvelope"


class QueueExists(CrowdtrainError):
    code = "QueueExists"


class NoSuchQueue(CrowdtrainError):
    code = "NoSuchQueue"


class UnknownLease(CrowdtrainError):
    code = "UnknownLease"


class NoSuchKey(CrowdtrainError):
    code = "NoSuchKey"


class VersionConflict(CrowdtrainError):
    code = "VersionConflict"


class WaitTimeout(CrowdtrainError):
    """A wait_for_version deadline passed before the version appeared."""

    code = "Timeout"


class BadRequest(CrowdtrainError):
    code = "BadRequest"


class ConnectionLost(CrowdtrainError):
    code = "ConnectionLost"


class ShapeMismatch(CrowdtrainError):
    code = "ShapeMismatch"


class LengthMismatch(CrowdtrainError):
    code = "LengthMismatch"


class IndexOutOfRange(CrowdtrainError):
    code = "IndexOutOfRange"


class CorpusTooShort(CrowdtrainError):
    code = "CorpusTooShort"


class JobInitFailed(CrowdtrainError):
    code = "JobInitFailed"


class TaskFailed(CrowdtrainError):
    """A handler could not complete its task; the lease is left to expire."""

    code = "TaskFailed"


class WorkerKilled(BaseException):
    """Raised inside a worker thread at a checkpoint after an abrupt kill.

    Derives from BaseException so ordinary handler ``except Exception``
    blocks cannot swallow it.
    """


class MalformedEvents(CrowdtrainError):
    code = "MalformedEvents"


class ExperimentStalled(CrowdtrainError):
    code = "ExperimentStalled"


_BY_CODE = {
    cls.code: cls
    for cls in [
        MalformedEnvelope,
        QueueExists,
        NoSuchQueue,
        UnknownLease,
        NoSuchKey,
        VersionConflict,
        WaitTimeout,
        BadRequest,
        ConnectionLost,
        ShapeMismatch,
        LengthMismatch,
        IndexOutOfRange,
        CorpusTooShort,
        JobInitFailed,
        TaskFailed,
        MalformedEvents,
        ExperimentStalled,
    ]
}


def error_for_code(code: str, detail: str = "") -> CrowdtrainError:
    """Rebuild the exception a remote peer reported by its code string."""
    cls = _BY_CODE.get(code, CrowdtrainError)
    err = cls(detail or code)
    if cls is CrowdtrainError:
        err.code = code
    return err
