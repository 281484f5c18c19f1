"""Event-driven analysis engine.

Jobs bind a camera set, a frame rate, a duration, and a registered
analyzer. Each camera stream runs as an independent worker that drives
ingestion and invokes the analyzer callback once per delivered frame, in
seq order, with per-stream private state. Results are persisted through
the registry store as ordered per-camera time series.

Analyzers consume grayscale rasters. Frame decoding is a pluggable port;
the built-in decoder handles binary PGM, which the testbed emits, so the
whole pipeline runs end-to-end without a codec dependency. Additional
decoders (e.g. a real JPEG decoder) can be registered at engine setup.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Optional

import numpy as np

from . import CamnetError, kernels
from .ingestion import poll_stream
from .model import Frame
from .registry import RESULTS_CAP, NotFoundError, RegistryStore

JOB_PENDING = "pending"
JOB_RUNNING = "running"
JOB_FINISHED = "finished"
JOB_FAILED = "failed"
JOB_CANCELLED = "cancelled"

STREAM_FINISHED = "finished"
STREAM_FAILED = "failed"
STREAM_CANCELLED = "cancelled"

CALLBACK_FAILURE_LIMIT = 10
DEFAULT_MAX_STREAMS = 64
_FLUSH_EVERY = 50


class AnalyzerError(CamnetError):
    pass


class DecodeError(CamnetError):
    pass


class JobValidationError(CamnetError):
    pass


class CapacityError(CamnetError):
    """Engine is at max concurrent streams; retry after a job finishes."""


@dataclass
class Raster:
    width: int
    height: int
    pixels: np.ndarray  # uint8, shape (height, width)
    channels: int = 1


def decode_pgm(data: bytes) -> Raster:
    """Binary PGM (P5), 8-bit."""
    if not data.startswith(b"P5"):
        raise DecodeError("not a binary PGM payload")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError("truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise DecodeError(f"bad PGM header field: {exc}") from exc
    if maxval > 255 or maxval <= 0:
        raise DecodeError("only 8-bit PGM is supported")
    expected = width * height
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise DecodeError(f"PGM payload has {len(raw)} bytes, header promises {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    return Raster(width=width, height=height, pixels=pixels)


def default_decoder(frame: Frame) -> Optional[Raster]:
    if frame.bytes.startswith(b"P5"):
        return decode_pgm(frame.bytes)
    return None


def motion_feature_count(prev: Raster, curr: Raster, threshold: int = 25, min_blob_px: int = 16) -> int:
    """Moving features between two frames: count of 4-connected
    super-threshold difference regions of at least min_blob_px pixels."""
    if (prev.width, prev.height) != (curr.width, curr.height):
        raise AnalyzerError(
            f"dimension mismatch: {prev.width}x{prev.height} vs {curr.width}x{curr.height}"
        )
    return kernels.motion_feature_count(prev.pixels, curr.pixels, int(threshold), int(min_blob_px))


def before_after_change_ratio(a: Raster, b: Raster, threshold: int = 25) -> float:
    """Fraction of pixels whose absolute difference exceeds threshold."""
    if (a.width, a.height) != (b.width, b.height):
        raise AnalyzerError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    return kernels.change_fraction(a.pixels, b.pixels, int(threshold))


# An analyzer factory builds one stateful step function per stream:
# step(raster, frame) -> value | None (None = no result for this frame).
AnalyzerFactory = Callable[[dict], Callable[[Raster, Frame], object]]


def _validate_threshold(params: dict) -> None:
    threshold = params.get("threshold", 25)
    if not isinstance(threshold, (int, float)) or not 0 <= threshold <= 255:
        raise JobValidationError("threshold must be within 0..255")


def _motion_params(params: dict) -> None:
    _validate_threshold(params)
    min_blob = params.get("min_blob_px", 16)
    if not isinstance(min_blob, (int, float)) or min_blob < 1:
        raise JobValidationError("min_blob_px must be at least 1")


def _motion_factory(params: dict) -> Callable[[Raster, Frame], object]:
    threshold = int(params.get("threshold", 25))
    min_blob = int(params.get("min_blob_px", 16))
    prev: list[Optional[Raster]] = [None]

    def step(raster: Raster, frame: Frame):
        if prev[0] is None:
            prev[0] = raster
            return None
        value = motion_feature_count(prev[0], raster, threshold, min_blob)
        prev[0] = raster
        return value

    return step


def _change_factory(params: dict) -> Callable[[Raster, Frame], object]:
    threshold = int(params.get("threshold", 25))
    prev: list[Optional[Raster]] = [None]

    def step(raster: Raster, frame: Frame):
        if prev[0] is None:
            prev[0] = raster
            return None
        value = before_after_change_ratio(prev[0], raster, threshold)
        prev[0] = raster
        return value

    return step


@dataclass
class AnalysisJob:
    id: str
    camera_ids: tuple[str, ...]
    fps: float
    duration_s: float
    analyzer: str
    params: dict
    state: str = JOB_PENDING
    streams: Optional[dict] = None
    truncated: bool = False

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "camera_ids": list(self.camera_ids),
            "fps": self.fps,
            "duration": self.duration_s,
            "analyzer": self.analyzer,
            "params": self.params,
            "state": self.state,
            "streams": self.streams or {},
            "truncated": self.truncated,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AnalysisJob":
        return cls(
            id=d["id"],
            camera_ids=tuple(d["camera_ids"]),
            fps=float(d["fps"]),
            duration_s=float(d["duration"]),
            analyzer=d["analyzer"],
            params=d.get("params") or {},
            state=d.get("state", JOB_PENDING),
            streams=d.get("streams") or {},
            truncated=bool(d.get("truncated", False)),
        )


class _JobHandle:
    def __init__(self, job: AnalysisJob):
        self.job = job
        self.cancel = threading.Event()
        self.threads: list[threading.Thread] = []
        self.finisher: Optional[threading.Thread] = None
        self.lock = threading.Lock()
        self.stream_states: dict[str, dict] = {
            cam: {"state": "running", "frames": 0, "errors": 0, "detail": ""}
            for cam in job.camera_ids
        }


class AnalysisEngine:
    """Schedules jobs over concurrent, isolated per-camera stream workers."""

    def __init__(
        self,
        store: RegistryStore,
        *,
        max_concurrent_streams: int = DEFAULT_MAX_STREAMS,
        decoder: Callable[[Frame], Optional[Raster]] = default_decoder,
        results_cap: int = RESULTS_CAP,
        callback_failure_limit: int = CALLBACK_FAILURE_LIMIT,
    ):
        self._store = store
        self._decoder = decoder
        self._max_streams = max_concurrent_streams
        self._results_cap = results_cap
        self._cb_limit = callback_failure_limit
        self._analyzers: dict[str, tuple[AnalyzerFactory, Optional[Callable[[dict], None]]]] = {}
        self._capacity_lock = threading.Lock()
        self._active_streams = 0
        self._handles: dict[str, _JobHandle] = {}
        self._handles_lock = threading.Lock()
        self.register_analyzer("motion_features", _motion_factory, _motion_params)
        self.register_analyzer("before_after_change", _change_factory, _validate_threshold)
        kernels.warmup()

    def register_analyzer(
        self,
        name: str,
        factory: AnalyzerFactory,
        validate_params: Optional[Callable[[dict], None]] = None,
    ) -> None:
        if name in self._analyzers:
            raise ValueError(f"analyzer {name!r} already registered")
        self._analyzers[name] = (factory, validate_params)

    @property
    def analyzer_names(self) -> list[str]:
        return sorted(self._analyzers)

    def submit(
        self,
        *,
        camera_ids,
        fps: float,
        duration_s: float,
        analyzer: str,
        params: Optional[dict] = None,
    ) -> str:
        params = dict(params or {})
        camera_ids = tuple(camera_ids)
        if not camera_ids:
            raise JobValidationError("camera_ids must be non-empty")
        if fps <= 0:
            raise JobValidationError("fps must be positive")
        if duration_s <= 0:
            raise JobValidationError("duration must be positive")
        if analyzer not in self._analyzers:
            raise JobValidationError(f"unknown analyzer {analyzer!r}")
        factory, validator = self._analyzers[analyzer]
        if validator is not None:
            validator(params)
        endpoints = {}
        for cam in camera_ids:
            try:
                endpoints[cam] = self._store.get(cam).endpoint
            except NotFoundError as exc:
                raise JobValidationError(f"unknown camera {cam!r}") from exc
        with self._capacity_lock:
            if self._active_streams + len(camera_ids) > self._max_streams:
                raise CapacityError(
                    f"{self._active_streams} streams active, limit {self._max_streams};"
                    " retry when a job completes"
                )
            self._active_streams += len(camera_ids)

        job = AnalysisJob(
            id=f"job-{uuid.uuid4().hex[:12]}",
            camera_ids=camera_ids,
            fps=fps,
            duration_s=duration_s,
            analyzer=analyzer,
            params=params,
        )
        handle = _JobHandle(job)
        with self._handles_lock:
            self._handles[job.id] = handle
        self._store.create_job(job.id, JOB_PENDING, job.to_json())
        job.state = JOB_RUNNING
        self._store.update_job(job.id, JOB_RUNNING, job.to_json())
        for cam in camera_ids:
            t = threading.Thread(
                target=self._run_stream,
                args=(handle, cam, endpoints[cam], factory),
                daemon=True,
                name=f"{job.id}:{cam}",
            )
            handle.threads.append(t)
            t.start()
        handle.finisher = threading.Thread(target=self._finish_job, args=(handle,), daemon=True)
        handle.finisher.start()
        return job.id

    def _run_stream(self, handle: _JobHandle, cam: str, endpoint, factory: AnalyzerFactory) -> None:
        job = handle.job
        state = handle.stream_states[cam]
        step = factory(dict(job.params))
        stream_dead = threading.Event()
        cb_errors = 0
        buffer: list[tuple[int, int, object]] = []

        def flush():
            if not buffer:
                return
            if self._store.count_results(job.id) + len(buffer) > self._results_cap:
                room = max(0, self._results_cap - self._store.count_results(job.id))
                if room:
                    self._store.append_results(job.id, cam, buffer[:room])
                job.truncated = True
                stream_dead.set()
            else:
                self._store.append_results(job.id, cam, buffer)
            buffer.clear()

        def sink(frame: Frame) -> None:
            nonlocal cb_errors
            state["frames"] += 1
            try:
                raster = self._decoder(frame)
                if raster is None:
                    raise DecodeError(f"no decoder for format {frame.format!r}")
                value = step(raster, frame)
            except Exception as exc:  # analyzer/decoder faults stay inside this stream
                state["errors"] += 1
                state["detail"] = f"{exc.__class__.__name__}: {exc}"
                cb_errors += 1
                if cb_errors >= self._cb_limit:
                    stream_dead.set()
                return
            cb_errors = 0
            if value is not None:
                buffer.append((frame.seq, frame.received_at, value))
                if len(buffer) >= _FLUSH_EVERY:
                    flush()

        try:
            summary = poll_stream(
                endpoint,
                job.fps,
                job.duration_s,
                sink,
                should_stop=lambda: handle.cancel.is_set() or stream_dead.is_set(),
                camera_id=cam,
            )
            flush()
            state["errors"] += summary.errors
            if handle.cancel.is_set():
                state["state"] = STREAM_CANCELLED
            elif stream_dead.is_set() or summary.aborted_early:
                state["state"] = STREAM_FAILED
                state["detail"] = state["detail"] or summary.detail
            else:
                state["state"] = STREAM_FINISHED
        except Exception as exc:  # defensive: a worker crash must not hang the job
            flush()
            state["state"] = STREAM_FAILED
            state["detail"] = f"{exc.__class__.__name__}: {exc}"
        finally:
            with self._capacity_lock:
                self._active_streams -= 1

    def _finish_job(self, handle: _JobHandle) -> None:
        for t in handle.threads:
            t.join()
        job = handle.job
        job.streams = handle.stream_states
        if handle.cancel.is_set():
            job.state = JOB_CANCELLED
        elif any(s["state"] == STREAM_FINISHED for s in handle.stream_states.values()):
            job.state = JOB_FINISHED
        else:
            job.state = JOB_FAILED
        self._store.update_job(job.id, job.state, job.to_json())

    def cancel(self, job_id: str) -> dict:
        with self._handles_lock:
            handle = self._handles.get(job_id)
        job_json = self._store.get_job(job_id)  # NotFoundError propagates
        if handle is None or job_json["state"] in (JOB_FINISHED, JOB_FAILED, JOB_CANCELLED):
            return job_json
        handle.cancel.set()
        handle.job.state = JOB_CANCELLED
        job_json["state"] = JOB_CANCELLED
        self._store.update_job(job_id, JOB_CANCELLED, {**handle.job.to_json(), "state": JOB_CANCELLED})
        return self._store.get_job(job_id)

    def get_job(self, job_id: str) -> dict:
        return self._store.get_job(job_id)

    def wait(self, job_id: str, timeout_s: float = 60.0) -> dict:
        """Block until the job leaves pending/running (test and CLI helper)."""
        with self._handles_lock:
            handle = self._handles.get(job_id)
        if handle is not None and handle.finisher is not None:
            handle.finisher.join(timeout=timeout_s)
        return self._store.get_job(job_id)

    def results(
        self,
        job_id: str,
        camera_id: Optional[str] = None,
        t_from: Optional[int] = None,
        t_to: Optional[int] = None,
    ) -> dict:
        job_json = self._store.get_job(job_id)
        series = self._store.get_results(job_id, camera_id, t_from, t_to)
        summary = {cam: summarize_series(points) for cam, points in series.items()}
        return {
            "job_id": job_id,
            "state": job_json["state"],
            "streams": job_json.get("streams", {}),
            "series": series,
            "summary": summary,
            "truncated": bool(job_json.get("truncated", False)),
        }


def summarize_series(points: list[dict]) -> dict:
    """count / mean / max plus per-hour bins for day-scale activity plots."""
    numeric = [p["value"] for p in points if isinstance(p["value"], (int, float))]
    hourly: dict[str, list[float]] = {}
    for p in points:
        if not isinstance(p["value"], (int, float)):
            continue
        hour = datetime.fromtimestamp(p["t"] / 1000.0, tz=timezone.utc).strftime("%Y-%m-%dT%H")
        hourly.setdefault(hour, []).append(float(p["value"]))
    return {
        "count": len(points),
        "mean": (sum(numeric) / len(numeric)) if numeric else None,
        "max": max(numeric) if numeric else None,
        "hourly": [
            {"hour": hour, "count": len(vals), "mean": sum(vals) / len(vals)}
            for hour, vals in sorted(hourly.items())
        ],
    }
