"""Key-value store with plain records and versioned, compare-and-set records.

Plain keys are last-write-wins blobs (dataset shards, metadata, loss logs).
Versioned keys hold the shared model: writes must name exactly the next
version, so concurrent or replayed updates collapse to a single winner per
version. wait_for_version parks the caller on a condition until the version
appears, which is the synchronization primitive the whole training loop
hangs off.
"""

from __future__ import annotations

import threading

from .errors import NoSuchKey, VersionConflict, WaitTimeout


class DataStore:
    """Linearizable in-memory store; all methods thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)
        self._plain: dict[str, bytes] = {}
        self._versioned: dict[str, tuple[int, bytes]] = {}

    def put_plain(self, key: str, payload: bytes) -> None:
        with self._lock:
            self._plain[key] = bytes(payload)

    def get_plain(self, key: str) -> bytes:
        with self._lock:
            try:
                return self._plain[key]
            except KeyError:
                raise NoSuchKey(key) from None

    def has_plain(self, key: str) -> bool:
        with self._lock:
            return key in self._plain

    def plain_keys(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(k for k in self._plain if k.startswith(prefix))

    def put_versioned(self, key: str, version: int, payload: bytes) -> None:
        """Atomically install (key, version, payload).

        Succeeds only when ``version`` is current+1, or 0/1 for a fresh key.
        Anything else raises VersionConflict: the caller lost the race (or is
        replaying an already-applied update) and must discard its write.
        """
        if version < 0:
            raise ValueError("version must be >= 0")
        with self._changed:
            cur = self._versioned.get(key)
            if cur is None:
                if version not in (0, 1):
                    raise VersionConflict(f"{key}: fresh key takes version 0 or 1, not {version}")
            elif version != cur[0] + 1:
                raise VersionConflict(f"{key}: at {cur[0]}, rejected write of {version}")
            self._versioned[key] = (version, bytes(payload))
            self._changed.notify_all()

    def get_versioned(self, key: str) -> tuple[int, bytes]:
        with self._lock:
            try:
                return self._versioned[key]
            except KeyError:
                raise NoSuchKey(key) from None

    def version_of(self, key: str) -> int | None:
        with self._lock:
            rec = self._versioned.get(key)
            return None if rec is None else rec[0]

    def wait_for_version(self, key: str, min_version: int, timeout_ms: float) -> tuple[int, bytes]:
        """Block until current_version(key) >= min_version; return the record.

        A key that never appears before the deadline counts as a timeout.
        """
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        with self._changed:
            ok = self._changed.wait_for(
                lambda: self._versioned.get(key, (-1, b""))[0] >= min_version,
                timeout=timeout_ms / 1000.0,
            )
            if not ok:
                raise WaitTimeout(f"{key}: version {min_version} not reached in {timeout_ms}ms")
            return self._versioned[key]
