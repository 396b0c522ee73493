"""Wire protocol: query submission, streaming, feedback, inbox/report, offload."""

import json
import socket
import threading
import time

import httpx
import pytest
import uvicorn

from theia.config import SimConfig, WIFI
from theia.devclient import HttpTransport, run_device_loop
from theia.device import DeviceEngine, MemCorpus
from theia.httpapi import build_app
from theia.predicates import encode_ppm
from theia.server import TheiaServer
from theia.templates import all_accept_query, synthetic_query
from theia.query import serialize_query
from tests.conftest import random_photo, uniform_photo


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class LiveServer:
    def __init__(self, server: TheiaServer, pace_scale: float = 0.0):
        self.port = free_port()
        config = uvicorn.Config(
            build_app(server, pace_scale=pace_scale),
            host="127.0.0.1",
            port=self.port,
            log_level="error",
        )
        self.uv = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.uv.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 10
        while not self.uv.started:
            if time.time() > deadline:
                raise RuntimeError("uvicorn did not start")
            time.sleep(0.02)
        return self

    def __exit__(self, *exc):
        self.uv.should_exit = True
        self.thread.join(timeout=5)


def make_server(tmp_path, devices: int = 2, photos: int = 15) -> TheiaServer:
    server = TheiaServer(SimConfig())
    for d in range(devices):
        device_id = f"dev{d}"
        plist = [random_photo(f"{device_id}_p{i:02d}", d * 100 + i, w=8, h=8) for i in range(photos)]
        server.attach_engine(
            DeviceEngine(device_id, MemCorpus(plist), tmp_path, WIFI, server.config, seed=d)
        )
    return server


def wait_complete(client: httpx.Client, session_id: str, timeout: float = 20.0) -> list[dict]:
    cursor = 0
    records: list[dict] = []
    deadline = time.time() + timeout
    while time.time() < deadline:
        page = client.get(f"/queries/{session_id}/results", params={"cursor": cursor})
        assert page.status_code == 200
        for line in page.text.splitlines():
            records.append(json.loads(line))
        cursor = int(page.headers["X-Next-Cursor"])
        if records and records[-1]["type"] == "complete":
            return records
        time.sleep(0.02)
    raise TimeoutError("session did not complete")


class TestInProcessFleetOverHttp:
    def test_submit_stream_feedback_detail(self, tmp_path):
        server = make_server(tmp_path)
        with LiveServer(server) as live, httpx.Client(base_url=live.url, timeout=30.0) as client:
            xml = serialize_query(all_accept_query(21))
            resp = client.post("/queries", json={"query_xml": xml, "budget": 300, "seed": 5})
            assert resp.status_code == 200
            body = resp.json()
            records = wait_complete(client, body["session_id"])
            results = [r for r in records if r["type"] == "result"]
            completion = records[-1]
            assert results
            assert completion["total_charge"] <= 300
            assert completion["devices"] == body["devices"]
            # feedback round trip
            first = results[0]
            marked = client.post(
                f"/queries/{body['session_id']}/feedback",
                json={"photo_id": first["photo_id"], "device_id": first["device_id"], "relevant": True},
            )
            assert marked.status_code == 200 and marked.json()["relevance_mark"] == "relevant"
            detail = client.get(f"/queries/{body['session_id']}").json()
            assert detail["status"] == "complete"
            assert detail["total_charge"] == completion["total_charge"]
            # photo bytes got cached with the result and are retrievable
            photo = client.get(f"/photos/{first['device_id']}/{first['photo_id']}")
            assert photo.status_code == 200
            assert photo.content.startswith(b"P6\n")

    def test_budget_below_minimum_rejected_inline(self, tmp_path):
        server = make_server(tmp_path)
        with LiveServer(server) as live, httpx.Client(base_url=live.url, timeout=10.0) as client:
            xml = serialize_query(all_accept_query(22))
            resp = client.post("/queries", json={"query_xml": xml, "budget": 5, "seed": 5})
            assert resp.status_code == 422
            assert resp.json()["detail"]["minimum"] == 12

    def test_unknown_session_404(self, tmp_path):
        server = make_server(tmp_path)
        with LiveServer(server) as live, httpx.Client(base_url=live.url, timeout=10.0) as client:
            assert client.get("/queries/snope/results").status_code == 404

    def test_malformed_query_rejected(self, tmp_path):
        server = make_server(tmp_path)
        with LiveServer(server) as live, httpx.Client(base_url=live.url, timeout=10.0) as client:
            resp = client.post("/queries", json={"query_xml": "<broken", "budget": 100, "seed": 1})
            assert resp.status_code == 422


class TestRemoteDeviceProtocol:
    def test_full_task_cycle_through_endpoints(self, tmp_path):
        server = TheiaServer(SimConfig())  # no in-process engines
        with LiveServer(server) as live:
            engine = DeviceEngine(
                "rdev0",
                MemCorpus([random_photo(f"rdev0_p{i:02d}", i, w=8, h=8) for i in range(12)]),
                tmp_path,
                WIFI,
                server.config,
                seed=9,
            )
            with httpx.Client(base_url=live.url, timeout=30.0) as client:
                # empty poll first (long poll returns 204 on timeout)
                empty = client.get("/devices/rdev0/inbox", params={"wait_ms": 50})
                assert empty.status_code == 204
                xml = serialize_query(synthetic_query(31, [(0.5, 2.0, 8)]))
                body = client.post(
                    "/queries", json={"query_xml": xml, "budget": 200, "seed": 2}
                ).json()
                assert body["devices"] == ["rdev0"]
                executed = run_device_loop(live.url, engine, poll_wait_ms=2000, once=True)
                assert executed == 1
                records = wait_complete(client, body["session_id"])
                completion = records[-1]
                assert completion["photos_searched"] == 12
                results = [r for r in records if r["type"] == "result"]
                assert completion["total_charge"] == 1 + 12 + 10 * len(results)
                # offloaded/result photos are in the cache
                if results:
                    photo = client.get(f"/photos/rdev0/{results[0]['photo_id']}")
                    assert photo.status_code == 200

    def test_partition_evaluate_multipart(self, tmp_path):
        server = TheiaServer(SimConfig())
        with LiveServer(server) as live, httpx.Client(base_url=live.url, timeout=10.0) as client:
            query = synthetic_query(33, [(1.0, 2.0, 4)])
            photo = uniform_photo("px", (0, 0, 255))
            spec = {
                "query_xml": serialize_query(query),
                "predicates": ["Synthetic"],
                "device_id": "devZ",
                "photo_id": "px",
                "session_id": "s-any",
            }
            resp = client.post(
                "/partition/evaluate",
                data={"spec": json.dumps(spec)},
                files={"photo": ("px.ppm", encode_ppm(photo.pixels), "image/x-portable-pixmap")},
            )
            assert resp.status_code == 200
            body = resp.json()
            assert body["accepted"] is True
            assert body["verdicts"]["Synthetic"]["cpu_time_ms"] == 2.0
            # stored in the data cache regardless of verdict
            assert client.get("/photos/devZ/px").status_code == 200

    def test_partition_evaluate_unknown_predicate_422(self, tmp_path):
        server = TheiaServer(SimConfig())
        with LiveServer(server) as live, httpx.Client(base_url=live.url, timeout=10.0) as client:
            spec = {
                "query_xml": serialize_query(all_accept_query(34)),
                "predicates": ["Mystery"],
                "device_id": "devZ",
                "photo_id": "py",
            }
            resp = client.post(
                "/partition/evaluate",
                data={"spec": json.dumps(spec)},
                files={"photo": ("py.ppm", encode_ppm(uniform_photo("py", (1, 1, 1)).pixels))},
            )
            assert resp.status_code == 422

    def test_http_transport_used_for_offload(self, tmp_path):
        """A remote device with a forced full-offload strategy pushes every
        photo through /partition/evaluate."""
        server = TheiaServer(SimConfig())
        with LiveServer(server) as live:
            engine = DeviceEngine(
                "rdev1",
                MemCorpus([random_photo(f"rdev1_p{i:02d}", i, w=8, h=8) for i in range(8)]),
                tmp_path,
                WIFI,
                server.config,
                seed=3,
            )
            with httpx.Client(base_url=live.url, timeout=30.0) as client:
                # devices register by polling their inbox
                assert client.get("/devices/rdev1/inbox", params={"wait_ms": 10}).status_code == 204
                xml = serialize_query(synthetic_query(35, [(0.5, 2.0, 6)]))
                body = client.post(
                    "/queries",
                    json={"query_xml": xml, "budget": 150, "seed": 2, "strategy": "offload"},
                ).json()
                run_device_loop(live.url, engine, poll_wait_ms=2000, once=True)
                records = wait_complete(client, body["session_id"])
                assert records[-1]["photos_searched"] == 8
                # every searched photo went through the agent and is cached
                for pid in engine.corpus.ids():
                    assert client.get(f"/photos/rdev1/{pid}").status_code == 200
