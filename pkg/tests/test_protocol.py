import json
import socket
import threading
import time

import numpy as np
import pytest

from crowdtrain import wsproto
from crowdtrain.broker import Broker
from crowdtrain.client import RemoteBroker, RemoteDataStore, WireClient
from crowdtrain.corpus import synthetic_corpus
from crowdtrain.datastore import DataStore
from crowdtrain.errors import (
    NoSuchKey,
    NoSuchQueue,
    QueueExists,
    UnknownLease,
    VersionConflict,
    WaitTimeout,
)
from crowdtrain.jobmodel import JobSpec, TaskEnvelope
from crowdtrain.nn import flatten, init_params, unpack_model
from crowdtrain.server import Coordinator
from crowdtrain.trainer import (
    TaskHandlers,
    TrainingConfig,
    build_dataset,
    plan_job,
    sequential_train,
)
from crowdtrain.worker import WorkerConfig, run_worker


@pytest.fixture
def coordinator():
    with Coordinator(broker=Broker(), store=DataStore(), tcp_port=0, ws_port=0) as coord:
        yield coord


@pytest.fixture
def remote(coordinator):
    client = WireClient(*coordinator.tcp_address)
    yield RemoteBroker(client), RemoteDataStore(client, poll_ms=20)
    client.close()


def task(task_id, version=0, payload=b"x"):
    return TaskEnvelope(
        task_id=task_id,
        job_id="j",
        kind="map",
        payload=payload,
        required_model_version=version,
        max_duration_ms=2000,
    )


class TestTcpBroker:
    def test_queue_lifecycle(self, remote):
        broker, _ = remote
        broker.create_queue("q")
        with pytest.raises(QueueExists):
            broker.create_queue("q")
        assert broker.depth("q") == (0, 0)
        with pytest.raises(NoSuchQueue):
            broker.depth("missing")

    def test_publish_fetch_ack(self, remote):
        broker, _ = remote
        broker.create_queue("q")
        broker.publish("q", task(5, payload=b"\x00\x01\xff"))
        lease = broker.fetch("q", "w0")
        assert lease.task.task_id == 5
        assert lease.task.payload == b"\x00\x01\xff"
        assert lease.task.delivery_count == 1
        assert lease.deadline > lease.issued_at
        assert broker.depth("q") == (0, 1)
        broker.ack(lease.lease_id)
        assert broker.depth("q") == (0, 0)
        with pytest.raises(UnknownLease):
            broker.ack(lease.lease_id)

    def test_fetch_empty_is_none(self, remote):
        broker, _ = remote
        broker.create_queue("q")
        assert broker.fetch("q", "w0") is None

    def test_priority_preserved_over_wire(self, remote):
        broker, _ = remote
        broker.create_queue("q")
        for tid, version in [(9, 1), (3, 0), (7, 0)]:
            broker.publish("q", task(tid, version=version))
        order = [broker.fetch("q", "w").task.task_id for _ in range(3)]
        assert order == [3, 7, 9]


class TestTcpStore:
    def test_plain_round_trip(self, remote):
        _, store = remote
        store.put_plain("k", b"\x00binary\xff")
        assert store.get_plain("k") == b"\x00binary\xff"
        with pytest.raises(NoSuchKey):
            store.get_plain("missing")

    def test_versioned_cas(self, remote):
        _, store = remote
        store.put_versioned("m", 0, b"v0")
        store.put_versioned("m", 1, b"v1")
        with pytest.raises(VersionConflict):
            store.put_versioned("m", 1, b"again")
        assert store.get_versioned("m") == (1, b"v1")

    def test_wait_for_version_remote(self, coordinator, remote):
        _, store = remote
        store.put_versioned("m", 0, b"v0")

        def writer():
            time.sleep(0.08)
            coordinator.store.put_versioned("m", 1, b"v1")

        thread = threading.Thread(target=writer)
        thread.start()
        version, payload = store.wait_for_version("m", 1, timeout_ms=3000)
        thread.join()
        assert (version, payload) == (1, b"v1")

    def test_wait_for_version_remote_timeout(self, remote):
        _, store = remote
        store.put_versioned("m", 0, b"v0")
        start = time.monotonic()
        with pytest.raises(WaitTimeout):
            store.wait_for_version("m", 9, timeout_ms=150)
        assert time.monotonic() - start < 2.0


class TestProtocolEdges:
    def test_malformed_json_frame(self, coordinator):
        sock = socket.create_connection(coordinator.tcp_address)
        sock.sendall(b"this is not json\n")
        response = json.loads(sock.makefile().readline())
        assert response["err"] == "BadRequest"
        sock.close()

    def test_unknown_op(self, coordinator):
        client = WireClient(*coordinator.tcp_address)
        from crowdtrain.errors import CrowdtrainError

        with pytest.raises(CrowdtrainError):
            client.request({"op": "explode"})
        client.close()

    def test_missing_fields(self, coordinator):
        client = WireClient(*coordinator.tcp_address)
        from crowdtrain.errors import BadRequest

        with pytest.raises(BadRequest):
            client.request({"op": "publish", "queue": "q"})
        client.close()

    def test_broker_only_rejects_store_ops(self):
        with Coordinator(broker=Broker(), tcp_port=0) as coord:
            client = WireClient(*coord.tcp_address)
            from crowdtrain.errors import BadRequest

            broker = RemoteBroker(client)
            broker.create_queue("q")
            with pytest.raises(BadRequest):
                client.request({"op": "get_plain", "key": "k"})
            client.close()

    def test_store_only_rejects_broker_ops(self):
        with Coordinator(store=DataStore(), tcp_port=0) as coord:
            client = WireClient(*coord.tcp_address)
            from crowdtrain.errors import BadRequest

            store = RemoteDataStore(client)
            store.put_plain("k", b"v")
            with pytest.raises(BadRequest):
                client.request({"op": "depth", "queue": "q"})
            client.close()

    def test_responses_in_order_per_connection(self, coordinator):
        client = WireClient(*coordinator.tcp_address)
        for i in range(50):
            client.request({"op": "put_plain", "key": f"k{i}", "payload_b64": ""})
        store = RemoteDataStore(client)
        for i in range(50):
            assert store.get_plain(f"k{i}") == b""
        client.close()


class TestWebSocket:
    def ws_request(self, conn, obj):
        conn.send_text(json.dumps(obj))
        return json.loads(conn.recv_text())

    def test_same_ops_over_websocket(self, coordinator):
        conn = wsproto.connect(*coordinator.ws_address)
        assert self.ws_request(conn, {"op": "create_queue", "queue": "wsq"}) == {"ok": True}
        task_dict = {
            "task_id": 1,
            "job_id": "j",
            "kind": "custom:demo",
            "payload_b64": "aGk=",
            "required_model_version": 0,
            "delivery_count": 0,
            "max_duration_ms": 1000,
        }
        assert self.ws_request(conn, {"op": "publish", "queue": "wsq", "task": task_dict}) == {"ok": True}
        got = self.ws_request(conn, {"op": "fetch", "queue": "wsq", "worker_id": "browser"})
        assert got["ok"]["task"]["task_id"] == 1
        assert got["ok"]["task"]["delivery_count"] == 1
        assert self.ws_request(conn, {"op": "ack", "lease_id": got["ok"]["lease_id"]}) == {"ok": True}
        depth = self.ws_request(conn, {"op": "depth", "queue": "wsq"})
        assert depth["ok"] == {"pending": 0, "leased": 0}
        conn.close()

    def test_store_ops_over_websocket(self, coordinator):
        conn = wsproto.connect(*coordinator.ws_address)
        assert self.ws_request(
            conn, {"op": "put_versioned", "key": "m", "version": 0, "payload_b64": "QUJD"}
        ) == {"ok": True}
        got = self.ws_request(conn, {"op": "get_versioned", "key": "m"})
        assert got["ok"] == {"version": 0, "payload_b64": "QUJD"}
        err = self.ws_request(conn, {"op": "get_plain", "key": "missing"})
        assert err["err"] == "NoSuchKey"
        conn.close()

    def test_bad_frame_over_websocket(self, coordinator):
        conn = wsproto.connect(*coordinator.ws_address)
        conn.send_text("{{{{")
        assert json.loads(conn.recv_text())["err"] == "BadRequest"
        conn.close()

    def test_fragmented_message(self, coordinator):
        # hand-roll a two-fragment masked text message
        sock = socket.create_connection(coordinator.ws_address)
        wsproto.client_handshake(sock, *coordinator.ws_address)
        payload = json.dumps({"op": "create_queue", "queue": "frag"}).encode()
        half = len(payload) // 2
        import os as _os

        def send_fragment(opcode, data, fin):
            header = bytearray([(0x80 if fin else 0) | opcode])
            header.append(0x80 | len(data))
            key = _os.urandom(4)
            header.extend(key)
            masked = bytes(b ^ key[i % 4] for i, b in enumerate(data))
            sock.sendall(bytes(header) + masked)

        send_fragment(wsproto.OP_TEXT, payload[:half], fin=False)
        send_fragment(wsproto.OP_CONT, payload[half:], fin=True)
        conn = wsproto.WebSocketConn(sock, is_server=False)
        assert json.loads(conn.recv_text()) == {"ok": True}
        conn.close()

    def test_ping_gets_pong(self, coordinator):
        sock = socket.create_connection(coordinator.ws_address)
        wsproto.client_handshake(sock, *coordinator.ws_address)
        wsproto._send_frame(sock, wsproto.OP_PING, b"hello", mask=True)
        wsproto._send_frame(sock, wsproto.OP_TEXT, b'{"op":"depth","queue":"x"}', mask=True)
        opcode, fin, payload = wsproto._read_frame(sock)
        assert opcode == wsproto.OP_PONG
        assert payload == b"hello"
        opcode, fin, payload = wsproto._read_frame(sock)
        assert opcode == wsproto.OP_TEXT
        assert json.loads(payload)["err"] == "NoSuchQueue"
        sock.close()


class TestRemoteEndToEnd:
    def test_full_job_over_tcp(self, coordinator):
        config = TrainingConfig(
            batch_size=4,
            minibatch_size=2,
            minibatches_to_accumulate=2,
            examples_per_epoch=8,
            epochs=1,
            sample_length=6,
            hidden_units=3,
            num_layers=1,
            shuffle_seed=2,
        )
        corpus = synthetic_corpus(size=500, seed=9)
        job = JobSpec(job_id="remote-job")
        vocab, _ = build_dataset(corpus, config)
        params = init_params(config.model_config(len(vocab)), seed=4)

        planner = WireClient(*coordinator.tcp_address)
        plan = plan_job(
            RemoteBroker(planner), RemoteDataStore(planner), job, config, corpus, params
        )

        def run_one(worker_id):
            client = WireClient(*coordinator.tcp_address)
            cfg = WorkerConfig(
                worker_id=worker_id,
                queues=(job.task_queue,),
                job_id=job.job_id,
                max_wall_ms=20_000,
                poll_backoff_ms=5,
            )
            run_worker(
                RemoteBroker(client), RemoteDataStore(client, poll_ms=20), cfg, TaskHandlers().table()
            )
            client.close()

        threads = [threading.Thread(target=run_one, args=(f"w{i}",)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        version, blob = RemoteDataStore(planner).get_versioned(job.model_key)
        assert version == plan.total_steps
        dist_params, _, _, _ = unpack_model(blob)
        seq_params, _, _ = sequential_train(config, corpus, params)
        assert np.array_equal(flatten(dist_params), flatten(seq_params))
        planner.close()
