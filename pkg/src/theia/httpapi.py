"""HTTP+JSON surface over the coordinator.

Endpoints:

* ``POST /queries`` -- submit query XML with a budget and seed
* ``GET /queries/{session}/results?cursor=k`` -- newline-delimited records
* ``GET /queries/{session}`` -- session detail
* ``POST /queries/{session}/feedback`` -- relevance marks
* ``GET /devices/{id}/inbox`` -- long-poll for task assignments
* ``POST /devices/{id}/report`` -- task start handshake, streamed result
  records (multipart with the photo), and final summaries
* ``POST /partition/evaluate`` -- multipart offload: part "spec" (query XML
  plus the ordered predicate list) and part "photo" (PPM bytes)
* ``GET /photos/{device_id}/{photo_id}`` -- cached photo bytes

Sessions over an attached in-process fleet run on a background thread so
the result stream is observable while the search executes.
"""

from __future__ import annotations

import json
import threading
import time
from typing import Optional

from fastapi import FastAPI, HTTPException, Request, Response
from starlette.datastructures import UploadFile

from theia.device import DeviceResult
from theia.predicates import decode_ppm, Photo
from theia.query import QueryParseError, QueryValidationError, parse_query
from theia.server import BudgetTooSmall, TheiaServer, UnknownRecord, UnknownSession


def build_app(server: TheiaServer, pace_scale: float = 0.0) -> FastAPI:
    app = FastAPI(title="theia", docs_url=None, redoc_url=None)

    def _session_or_404(session_id: str):
        try:
            return server._session(session_id)
        except UnknownSession:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.post("/queries")
    def submit_query(body: dict) -> dict:
        try:
            query_xml = body["query_xml"]
            budget = int(body["budget"])
            seed = int(body.get("seed", 0))
            strategy = body.get("strategy", "partitioned")
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad request body: {exc}")
        try:
            session = server.create_session(query_xml, budget, seed, strategy)
        except BudgetTooSmall as exc:
            raise HTTPException(
                status_code=422,
                detail={"error": "budget below minimum", "minimum": exc.minimum},
            )
        except (QueryParseError, QueryValidationError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        threading.Thread(
            target=server.dispatch_session, args=(session, pace_scale), daemon=True
        ).start()
        return {
            "session_id": session.session_id,
            "query_id": session.query.id,
            "devices": session.devices,
            "budget": session.budget,
        }

    @app.get("/queries/{session_id}")
    def session_detail(session_id: str) -> dict:
        session = _session_or_404(session_id)
        return {
            "session_id": session.session_id,
            "query_id": session.query.id,
            "status": session.status,
            "budget": session.budget,
            "devices": session.devices,
            "total_charge": session.total_charge,
            "results": len(session.records),
            "photos_searched": session.photos_searched,
        }

    @app.get("/queries/{session_id}/results")
    def stream_results(session_id: str, cursor: int = 0) -> Response:
        _session_or_404(session_id)
        lines, next_cursor, status = server.stream_results(session_id, cursor)
        body = "\n".join(lines) + ("\n" if lines else "")
        return Response(
            content=body,
            media_type="application/x-ndjson",
            headers={"X-Next-Cursor": str(next_cursor), "X-Session-Status": status},
        )

    @app.post("/queries/{session_id}/feedback")
    def feedback(session_id: str, body: dict) -> dict:
        _session_or_404(session_id)
        try:
            photo_id = body["photo_id"]
            device_id = body["device_id"]
            relevant = bool(body["relevant"])
        except (KeyError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=f"bad request body: {exc}")
        try:
            return server.mark_feedback(session_id, photo_id, device_id, relevant)
        except UnknownRecord as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/devices/{device_id}/inbox")
    def inbox(device_id: str, wait_ms: int = 0) -> Response:
        if device_id in server.engines:
            raise HTTPException(status_code=409, detail=f"{device_id} runs in-process")
        server.register_remote(device_id)
        queue = server.remote_devices[device_id]["inbox"]
        deadline = time.monotonic() + wait_ms / 1000.0
        while True:
            if queue:
                return Response(content=json.dumps(queue.pop(0)), media_type="application/json")
            if time.monotonic() >= deadline:
                return Response(status_code=204)
            time.sleep(0.02)

    @app.post("/devices/{device_id}/report")
    async def report(device_id: str, request: Request) -> dict:
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            record = json.loads(form["record"])
            ppm: Optional[bytes] = None
            photo_part = form.get("photo")
            if isinstance(photo_part, UploadFile):
                ppm = await photo_part.read()
            result = DeviceResult(
                session_id=record["session_id"],
                device_id=device_id,
                photo_id=record["photo_id"],
                score=float(record["score"]),
                predicate_scores={k: float(v) for k, v in record["predicate_scores"].items()},
                virtual_ts_ms=float(record["virtual_ts_ms"]),
            )
            try:
                stored = server.record_result(result, ppm=ppm)
            except UnknownSession as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            return {"ok": True, "arrival_index": stored.arrival_index}
        body = await request.json()
        kind = body.get("type")
        try:
            if kind == "start":
                return server.start_device(
                    body["session_id"], device_id, set(body.get("searched", []))
                )
            if kind == "summary":
                server.record_summary(body["session_id"], device_id, body["summary"])
                return {"ok": True}
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"bad report: {exc}")
        raise HTTPException(status_code=422, detail=f"unknown report type {kind!r}")

    @app.post("/partition/evaluate")
    async def partition_evaluate(request: Request) -> dict:
        form = await request.form()
        try:
            spec = json.loads(form["spec"])
            photo_part = form["photo"]
            ppm = await photo_part.read() if isinstance(photo_part, UploadFile) else bytes(
                photo_part, "latin-1"
            )
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"missing multipart part: {exc}")
        try:
            query = parse_query(spec["query_xml"], server.registry)
            photo = Photo(id=spec["photo_id"], pixels=decode_ppm(ppm), nbytes=len(ppm))
        except (QueryParseError, QueryValidationError, ValueError, KeyError) as exc:
            raise HTTPException(status_code=422, detail=f"bad offload request: {exc}")
        try:
            remote = server.partition_agent_evaluate(
                query, spec["device_id"], photo, spec["predicates"], ppm=ppm
            )
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "accepted": remote.accepted,
            "verdicts": {
                key: {"accepted": v.accepted, "score": v.score, "cpu_time_ms": v.cpu_time_ms}
                for key, v in remote.verdicts.items()
            },
        }

    @app.get("/photos/{device_id}/{photo_id}")
    def photo_bytes(device_id: str, photo_id: str) -> Response:
        data = server.cache.get(device_id, photo_id)
        if data is None:
            raise HTTPException(status_code=404, detail="photo not cached")
        return Response(content=data, media_type="image/x-portable-pixmap")

    return app
