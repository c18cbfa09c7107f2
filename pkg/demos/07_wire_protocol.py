"""The wire protocol, shown raw: newline-framed JSON over TCP and the same
frames over WebSocket.

Anything that can open a socket can be a volunteer; the browser client in
frontend/ speaks exactly these bytes over WebSocket.
"""

import sys

sys.path.insert(0, "src")

import json
import socket

from crowdtrain import wsproto
from crowdtrain.broker import Broker
from crowdtrain.datastore import DataStore
from crowdtrain.server import Coordinator

coordinator = Coordinator(broker=Broker(), store=DataStore(), tcp_port=0, ws_port=0)
coordinator.start()
print(f"coordinator: tcp={coordinator.tcp_address} ws={coordinator.ws_address}")

# --- raw TCP: one JSON object per line, one response per request ---
sock = socket.create_connection(coordinator.tcp_address)
reader = sock.makefile()


def tcp_request(obj):
    line = json.dumps(obj)
    sock.sendall(line.encode() + b"\n")
    response = reader.readline().strip()
    print(f"  -> {line}")
    print(f"  <- {response}")
    return json.loads(response)


print("\nover TCP:")
tcp_request({"op": "create_queue", "queue": "InitialQueue"})
tcp_request(
    {
        "op": "publish",
        "queue": "InitialQueue",
        "task": {
            "task_id": 1,
            "job_id": "wire-demo",
            "kind": "custom:noop",
            "payload_b64": "aGVsbG8=",
            "required_model_version": 0,
            "delivery_count": 0,
            "max_duration_ms": 5000,
        },
    }
)
got = tcp_request({"op": "fetch", "queue": "InitialQueue", "worker_id": "tcp-demo"})
tcp_request({"op": "ack", "lease_id": got["ok"]["lease_id"]})
tcp_request({"op": "depth", "queue": "InitialQueue"})
tcp_request({"op": "bogus"})
sock.close()

# --- the identical frames as WebSocket text messages ---
print("\nover WebSocket:")
conn = wsproto.connect(*coordinator.ws_address)


def ws_request(obj):
    text = json.dumps(obj)
    conn.send_text(text)
    response = conn.recv_text()
    print(f"  -> {text}")
    print(f"  <- {response}")


ws_request({"op": "put_versioned", "key": "wire-demo:model", "version": 0, "payload_b64": "AAAA"})
ws_request({"op": "get_versioned", "key": "wire-demo:model"})
ws_request({"op": "depth", "queue": "InitialQueue"})
conn.close()
coordinator.stop()
print("\ndone")
