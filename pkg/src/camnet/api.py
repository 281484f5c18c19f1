"""REST surface over the registry store and the analysis engine.

JSON bodies use the canonical serialization throughout. Errors come back
as {"code", "message", "details"} with 400 (bad request), 404 (unknown
id), 422 (invalid record/job), 502 (camera upstream failure), or 503
(engine at capacity).
"""

from __future__ import annotations

import os
from typing import Optional

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse

from .model import camera_record_from_json, camera_record_to_json
from .registry import (
    CameraFilter,
    InvalidFilterError,
    InvalidRecordError,
    NotFoundError,
    RegistryStore,
    UpstreamError,
)
from .runtime import AnalysisEngine, CapacityError, JobValidationError

_CONTENT_TYPES = {
    "jpeg": "image/jpeg",
    "png": "image/png",
    "unknown": "application/octet-stream",
}


def _error(status: int, code: str, message: str, details=None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "details": details},
    )


def _parse_bbox(raw: Optional[str]):
    if raw is None:
        return None
    parts = raw.split(",")
    if len(parts) != 4:
        raise InvalidFilterError("bbox must be min_lon,min_lat,max_lon,max_lat")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise InvalidFilterError(f"bbox holds a non-number: {exc}") from exc


def create_app(store: RegistryStore, engine: AnalysisEngine, *, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="camnet registry", docs_url=None, redoc_url=None)

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError):
        return _error(404, "not_found", str(exc))

    @app.exception_handler(InvalidFilterError)
    async def _bad_filter(request: Request, exc: InvalidFilterError):
        return _error(400, "invalid_filter", str(exc))

    @app.exception_handler(InvalidRecordError)
    async def _bad_record(request: Request, exc: InvalidRecordError):
        return _error(422, "invalid_record", "record violates invariants", {"violations": exc.violations})

    @app.exception_handler(JobValidationError)
    async def _bad_job(request: Request, exc: JobValidationError):
        return _error(422, "invalid_job", str(exc))

    @app.exception_handler(CapacityError)
    async def _capacity(request: Request, exc: CapacityError):
        return _error(503, "capacity_exceeded", str(exc))

    @app.exception_handler(UpstreamError)
    async def _upstream(request: Request, exc: UpstreamError):
        return _error(502, "upstream_failure", str(exc))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "cameras": store.count()}

    @app.get("/cameras")
    def list_cameras(
        bbox: Optional[str] = None,
        country: Optional[str] = None,
        state: Optional[str] = None,
        city: Optional[str] = None,
        disposition: Optional[str] = None,
        limit: int = 100,
        offset: int = 0,
    ):
        f = CameraFilter(
            bbox=_parse_bbox(bbox),
            country=country,
            state=state,
            city=city,
            disposition=disposition,
            limit=limit,
            offset=offset,
        )
        records, total = store.query(f)
        return {"items": [camera_record_to_json(r) for r in records], "total": total}

    @app.get("/cameras/{camera_id}")
    def get_camera(camera_id: str):
        return camera_record_to_json(store.get(camera_id))

    @app.post("/cameras", status_code=201)
    async def post_camera(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed_json", "request body is not valid JSON")
        try:
            rec = camera_record_from_json(body)
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "malformed_record", f"missing or mistyped field: {exc}")
        stored = store.upsert(rec)
        return camera_record_to_json(stored)

    @app.get("/cameras/{camera_id}/snapshot")
    def get_snapshot(camera_id: str):
        frame = store.fetch_snapshot(camera_id)
        media = _CONTENT_TYPES.get(frame.format, "application/octet-stream")
        if frame.bytes.startswith(b"P5"):
            media = "image/x-portable-graymap"
        return Response(content=frame.bytes, media_type=media)

    @app.get("/clusters")
    def get_clusters(bbox: str, zoom: int):
        parsed = _parse_bbox(bbox)
        return [c.to_json() for c in store.cluster_markers(parsed, zoom)]

    @app.post("/jobs", status_code=201)
    async def post_job(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed_json", "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "malformed_job", "job body must be a JSON object")
        try:
            camera_ids = body["camera_ids"]
            fps = float(body["fps"])
            duration = float(body["duration"])
            analyzer = body["analyzer"]
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "malformed_job", f"missing or mistyped field: {exc}")
        job_id = engine.submit(
            camera_ids=camera_ids,
            fps=fps,
            duration_s=duration,
            analyzer=analyzer,
            params=body.get("params") or {},
        )
        return {"id": job_id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return engine.get_job(job_id)

    @app.get("/jobs/{job_id}/results")
    def get_results(
        job_id: str,
        camera_id: Optional[str] = None,
        t_from: Optional[int] = Query(None, alias="from"),
        t_to: Optional[int] = Query(None, alias="to"),
    ):
        return engine.results(job_id, camera_id=camera_id, t_from=t_from, t_to=t_to)

    @app.delete("/jobs/{job_id}")
    def delete_job(job_id: str):
        return engine.cancel(job_id)

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
