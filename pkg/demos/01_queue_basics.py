"""Work-queue walkthrough: publish, lease, ack, and expiry redelivery.

The broker never deletes a task on fetch. A fetch hands out a lease with a
deadline; only an ack inside the deadline removes the task. Here we watch a
task survive a worker that walks away.
"""

import sys

sys.path.insert(0, "src")

from crowdtrain.broker import Broker, ManualClock
from crowdtrain.jobmodel import TaskEnvelope

clock = ManualClock()
broker = Broker(clock=clock)
broker.create_queue("InitialQueue")

for task_id, version in [(10, 2), (11, 1), (12, 1)]:
    broker.publish(
        "InitialQueue",
        TaskEnvelope(
            task_id=task_id,
            job_id="demo",
            kind="map",
            payload=b"demo-payload",
            required_model_version=version,
            max_duration_ms=5_000,
        ),
    )
print("published 3 tasks, depth:", broker.depth("InitialQueue"))

# fetch order is (required_model_version, task_id), not FIFO
lease = broker.fetch("InitialQueue", "worker-a")
print(f"worker-a got task {lease.task.task_id} (version {lease.task.required_model_version})")

# worker-a acks: the task is gone for good
broker.ack(lease.lease_id)
print("after ack, depth:", broker.depth("InitialQueue"))

# worker-b fetches the next task and silently dies
lease = broker.fetch("InitialQueue", "worker-b")
print(f"worker-b got task {lease.task.task_id} and disappeared...")
print("depth while leased:", broker.depth("InitialQueue"))

clock.advance(5_000)
redelivered = broker.sweep_expired()
print(f"sweep after {lease.task.max_duration_ms}ms: {redelivered} task back in queue")

lease = broker.fetch("InitialQueue", "worker-c")
print(
    f"worker-c got task {lease.task.task_id} again, delivery_count now "
    f"{lease.task.delivery_count}"
)
broker.ack(lease.lease_id)
lease = broker.fetch("InitialQueue", "worker-c")
broker.ack(lease.lease_id)
print("final depth:", broker.depth("InitialQueue"))
published, acked = broker.counters("InitialQueue")
print(f"conservation: published={published}, acked={acked}")
