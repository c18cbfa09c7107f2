"""Versioned model store: compare-and-set writes and version waits.

The model key only ever moves forward: a write must name exactly the next
version, so replayed or racing updates lose cleanly. Readers who need a
future version park on wait_for_version and wake the moment it lands.
"""

import sys
import threading
import time

sys.path.insert(0, "src")

from crowdtrain.datastore import DataStore
from crowdtrain.errors import VersionConflict, WaitTimeout

store = DataStore()

store.put_versioned("model", 0, b"initial weights")
print("stored version 0")

store.put_versioned("model", 1, b"weights after step 0")
print("stored version 1")

try:
    store.put_versioned("model", 1, b"duplicate update")
except VersionConflict as exc:
    print("duplicate write of version 1 rejected:", exc)

version, payload = store.get_versioned("model")
print(f"current record: version {version}, {payload!r}")


def late_writer():
    time.sleep(0.2)
    store.put_versioned("model", 2, b"weights after step 1")
    print("  [writer] version 2 installed")


threading.Thread(target=late_writer).start()
print("waiting for version 2...")
t0 = time.monotonic()
version, payload = store.wait_for_version("model", 2, timeout_ms=5_000)
print(f"woke after {(time.monotonic() - t0) * 1000:.0f}ms with version {version}")

try:
    store.wait_for_version("model", 99, timeout_ms=300)
except WaitTimeout as exc:
    print("unsatisfiable wait timed out as expected:", exc)
