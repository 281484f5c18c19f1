"""Camera registry: persistence, geospatial queries, and marker clustering.

An embedded SQLite store holds the canonical JSON of every record plus
derived numeric/label columns for filtering. Bounding boxes whose west
edge is east of their east edge are treated as antimeridian-crossing and
split internally. Cameras without coordinates never appear on maps but
stay queryable by their labels. The same store persists analysis jobs and
their result series.
"""

from __future__ import annotations

import json
import math
import sqlite3
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import requests

from . import CamnetError, kernels
from .ingestion import (
    FetchError,
    ImageParseError,
    MultipartParser,
    boundary_from_content_type,
    detect_format,
    fetch_snapshot_frame,
    iter_stream_chunks,
    parse_image_dimensions,
)
from .model import (
    FORMAT_JPEG,
    FORMAT_PNG,
    MODE_SNAPSHOT,
    CameraRecord,
    Frame,
    GeoPoint,
    camera_record_from_json,
    camera_record_to_json,
    canonical_json,
    now_ms,
    validate_camera_record,
)

DEFAULT_SNAPSHOT_TTL_S = 10.0
MAX_PAGE_LIMIT = 1000
RESULTS_CAP = 1_000_000

_DISPOSITION_PREFIX = "disposition:"


class RegistryError(CamnetError):
    pass


class NotFoundError(RegistryError):
    pass


class InvalidRecordError(RegistryError):
    def __init__(self, violations: list[str]):
        super().__init__(f"invalid record: {', '.join(violations)}")
        self.violations = violations


class InvalidFilterError(RegistryError):
    pass


class UpstreamError(RegistryError):
    """The camera itself failed; surfaces as a bad-gateway-class error."""


@dataclass
class CameraFilter:
    bbox: Optional[tuple[float, float, float, float]] = None  # min_lon, min_lat, max_lon, max_lat
    country: Optional[str] = None
    state: Optional[str] = None
    city: Optional[str] = None
    disposition: Optional[str] = None
    limit: int = 100
    offset: int = 0

    def validated(self) -> "CameraFilter":
        if self.limit < 1:
            raise InvalidFilterError("limit must be at least 1")
        if self.offset < 0:
            raise InvalidFilterError("offset must be non-negative")
        if self.bbox is not None:
            if len(self.bbox) != 4 or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in self.bbox):
                raise InvalidFilterError("bbox must be four finite numbers: min_lon,min_lat,max_lon,max_lat")
            min_lon, min_lat, max_lon, max_lat = self.bbox
            if min_lat > max_lat:
                raise InvalidFilterError("bbox latitude bounds are inverted")
            if not (-90 <= min_lat <= 90 and -90 <= max_lat <= 90):
                raise InvalidFilterError("bbox latitudes out of range")
            if not (-180 <= min_lon <= 180 and -180 <= max_lon <= 180):
                raise InvalidFilterError("bbox longitudes out of range")
        limit = min(self.limit, MAX_PAGE_LIMIT)
        return CameraFilter(
            bbox=self.bbox,
            country=self.country,
            state=self.state,
            city=self.city,
            disposition=self.disposition,
            limit=limit,
            offset=self.offset,
        )


@dataclass(frozen=True)
class MarkerCluster:
    centroid: GeoPoint
    count: int
    representative_id: str
    cell: tuple[int, int, int]  # zoom, x, y

    def to_json(self) -> dict:
        return {
            "centroid": {"latitude": self.centroid.latitude, "longitude": self.centroid.longitude},
            "count": self.count,
            "representative_id": self.representative_id,
            "cell": {"zoom": self.cell[0], "x": self.cell[1], "y": self.cell[2]},
        }


def _disposition_of(rec: CameraRecord) -> Optional[str]:
    for tag in rec.tags:
        if tag.startswith(_DISPOSITION_PREFIX):
            return tag[len(_DISPOSITION_PREFIX) :]
    return None


_SCHEMA = """
CREATE TABLE IF NOT EXISTS cameras (
    id TEXT PRIMARY KEY,
    lat REAL,
    lon REAL,
    country TEXT,
    state TEXT,
    city TEXT,
    disposition TEXT,
    json TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_cameras_lat_lon ON cameras(lat, lon);
CREATE INDEX IF NOT EXISTS idx_cameras_labels ON cameras(country, state, city);
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    state TEXT NOT NULL,
    created_ms INTEGER NOT NULL,
    json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS results (
    job_id TEXT NOT NULL,
    camera_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    t INTEGER NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (job_id, camera_id, seq)
);
"""


class RegistryStore:
    """SQLite-backed store; concurrent readers, serialized writers.

    Each thread gets its own connection (WAL journal). The snapshot cache
    bounds upstream load per camera to one fetch per TTL.
    """

    _memory_seq = 0
    _memory_seq_lock = threading.Lock()

    def __init__(self, path: str = ":memory:", *, snapshot_ttl_s: float = DEFAULT_SNAPSHOT_TTL_S):
        self._memory = path == ":memory:"
        if self._memory:
            # a named shared-cache database so every thread can open its own
            # connection to the same in-memory store
            with RegistryStore._memory_seq_lock:
                RegistryStore._memory_seq += 1
                name = f"camnet_mem_{id(self)}_{RegistryStore._memory_seq}"
            self._uri = f"file:{name}?mode=memory&cache=shared"
        else:
            self._uri = path
        self._ttl = snapshot_ttl_s
        self._local = threading.local()
        self._all_conns: list[sqlite3.Connection] = []
        self._conns_lock = threading.Lock()
        self._cache: dict[str, tuple[float, Frame]] = {}
        self._cache_lock = threading.Lock()
        self._conn().executescript(_SCHEMA)
        self._conn().commit()

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self._uri, timeout=30.0, uri=self._memory)
            if not self._memory:
                conn.execute("PRAGMA journal_mode=WAL")
                conn.execute("PRAGMA synchronous=NORMAL")
            conn.execute("PRAGMA busy_timeout=30000")
            self._local.conn = conn
            with self._conns_lock:
                self._all_conns.append(conn)
        return conn

    def close(self) -> None:
        with self._conns_lock:
            for conn in self._all_conns:
                try:
                    conn.close()
                except sqlite3.ProgrammingError:
                    pass
            self._all_conns.clear()
        self._local = threading.local()

    # ------------------------------------------------------------------
    # Cameras
    # ------------------------------------------------------------------

    def upsert(self, rec: CameraRecord) -> CameraRecord:
        violations = validate_camera_record(rec)
        if violations:
            raise InvalidRecordError(violations)
        row = self._camera_row(rec)
        conn = self._conn()
        conn.execute(
            "INSERT OR REPLACE INTO cameras (id, lat, lon, country, state, city, disposition, json)"
            " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            row,
        )
        conn.commit()
        return rec

    def upsert_many(self, recs) -> int:
        rows = []
        for rec in recs:
            violations = validate_camera_record(rec)
            if violations:
                raise InvalidRecordError(violations)
            rows.append(self._camera_row(rec))
        conn = self._conn()
        conn.executemany(
            "INSERT OR REPLACE INTO cameras (id, lat, lon, country, state, city, disposition, json)"
            " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            rows,
        )
        conn.commit()
        return len(rows)

    @staticmethod
    def _camera_row(rec: CameraRecord) -> tuple:
        point = rec.location.point
        return (
            rec.id,
            point.latitude if point else None,
            point.longitude if point else None,
            rec.location.country,
            rec.location.state,
            rec.location.city,
            _disposition_of(rec),
            canonical_json(camera_record_to_json(rec)),
        )

    def get(self, camera_id: str) -> CameraRecord:
        row = self._conn().execute("SELECT json FROM cameras WHERE id = ?", (camera_id,)).fetchone()
        if row is None:
            raise NotFoundError(f"no camera {camera_id!r}")
        return camera_record_from_json(json.loads(row[0]))

    def count(self) -> int:
        return self._conn().execute("SELECT COUNT(*) FROM cameras").fetchone()[0]

    @staticmethod
    def _filter_sql(f: CameraFilter) -> tuple[str, list]:
        clauses = []
        params: list = []
        for column, value in (
            ("country", f.country),
            ("state", f.state),
            ("city", f.city),
            ("disposition", f.disposition),
        ):
            if value is not None:
                clauses.append(f"{column} = ?")
                params.append(value)
        if f.bbox is not None:
            min_lon, min_lat, max_lon, max_lat = f.bbox
            clauses.append("lat IS NOT NULL AND lon IS NOT NULL")
            clauses.append("lat BETWEEN ? AND ?")
            params.extend([min_lat, max_lat])
            if min_lon <= max_lon:
                clauses.append("lon BETWEEN ? AND ?")
                params.extend([min_lon, max_lon])
            else:
                # bbox crosses the antimeridian: split into two boxes
                clauses.append("(lon >= ? OR lon <= ?)")
                params.extend([min_lon, max_lon])
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        return where, params

    def query(self, f: CameraFilter) -> tuple[list[CameraRecord], int]:
        f = f.validated()
        where, params = self._filter_sql(f)
        conn = self._conn()
        total = conn.execute(f"SELECT COUNT(*) FROM cameras{where}", params).fetchone()[0]
        rows = conn.execute(
            f"SELECT json FROM cameras{where} ORDER BY id LIMIT ? OFFSET ?",
            params + [f.limit, f.offset],
        ).fetchall()
        return [camera_record_from_json(json.loads(r[0])) for r in rows], total

    # ------------------------------------------------------------------
    # Clustering
    # ------------------------------------------------------------------

    def cluster_markers(self, bbox: tuple[float, float, float, float], zoom: int) -> list[MarkerCluster]:
        """One cluster per non-empty Web-Mercator grid cell inside bbox.

        Counts conserve exactly: the sum over clusters equals the number of
        in-bbox cameras with a known location.
        """
        if not 0 <= zoom <= 20:
            raise InvalidFilterError("zoom must be within 0..20")
        f = CameraFilter(bbox=bbox).validated()
        where, params = self._filter_sql(f)
        rows = self._conn().execute(
            f"SELECT id, lat, lon FROM cameras{where} ORDER BY id", params
        ).fetchall()
        if not rows:
            return []
        ids = [r[0] for r in rows]
        lat = np.array([r[1] for r in rows], dtype=np.float64)
        lon = np.array([r[2] for r in rows], dtype=np.float64)
        cells = kernels.mercator_cells(lat, lon, zoom)
        unique, counts, sum_lat, sum_lon, first_index = kernels.aggregate_cells(cells, lat, lon)
        n = 1 << zoom
        clusters = []
        for g in range(len(unique)):
            cell = int(unique[g])
            clusters.append(
                MarkerCluster(
                    centroid=GeoPoint(
                        latitude=float(sum_lat[g] / counts[g]),
                        longitude=float(sum_lon[g] / counts[g]),
                    ),
                    count=int(counts[g]),
                    representative_id=ids[int(first_index[g])],
                    cell=(zoom, cell % n, cell // n),
                )
            )
        clusters.sort(key=lambda c: (c.cell[2], c.cell[1]))
        return clusters

    # ------------------------------------------------------------------
    # Snapshots
    # ------------------------------------------------------------------

    def fetch_snapshot(
        self, camera_id: str, *, fetcher: Optional[Callable[[CameraRecord], Frame]] = None
    ) -> Frame:
        """Latest frame for a camera; a TTL cache bounds upstream load."""
        rec = self.get(camera_id)  # NotFoundError propagates
        now = time.monotonic()
        with self._cache_lock:
            hit = self._cache.get(camera_id)
            if hit is not None and hit[0] > now:
                return hit[1]
        fetch = fetcher or _default_snapshot_fetch
        try:
            frame = fetch(rec)
        except (FetchError, requests.exceptions.RequestException) as exc:
            raise UpstreamError(f"camera {camera_id} fetch failed: {exc}") from exc
        with self._cache_lock:
            self._cache[camera_id] = (now + self._ttl, frame)
        return frame

    # ------------------------------------------------------------------
    # Jobs and results
    # ------------------------------------------------------------------

    def create_job(self, job_id: str, state: str, job_json: dict) -> None:
        conn = self._conn()
        conn.execute(
            "INSERT INTO jobs (id, state, created_ms, json) VALUES (?, ?, ?, ?)",
            (job_id, state, now_ms(), canonical_json(job_json)),
        )
        conn.commit()

    def update_job(self, job_id: str, state: str, job_json: dict) -> None:
        conn = self._conn()
        conn.execute(
            "UPDATE jobs SET state = ?, json = ? WHERE id = ?",
            (state, canonical_json(job_json), job_id),
        )
        conn.commit()

    def get_job(self, job_id: str) -> dict:
        row = self._conn().execute("SELECT json FROM jobs WHERE id = ?", (job_id,)).fetchone()
        if row is None:
            raise NotFoundError(f"no job {job_id!r}")
        return json.loads(row[0])

    def list_jobs(self) -> list[dict]:
        rows = self._conn().execute("SELECT json FROM jobs ORDER BY created_ms").fetchall()
        return [json.loads(r[0]) for r in rows]

    def append_results(self, job_id: str, camera_id: str, points: list[tuple[int, int, object]]) -> None:
        """points: (seq, t_ms, value) tuples."""
        if not points:
            return
        conn = self._conn()
        conn.executemany(
            "INSERT OR REPLACE INTO results (job_id, camera_id, seq, t, value) VALUES (?, ?, ?, ?, ?)",
            [(job_id, camera_id, seq, t, json.dumps(value)) for seq, t, value in points],
        )
        conn.commit()

    def count_results(self, job_id: str) -> int:
        return self._conn().execute(
            "SELECT COUNT(*) FROM results WHERE job_id = ?", (job_id,)
        ).fetchone()[0]

    def get_results(
        self,
        job_id: str,
        camera_id: Optional[str] = None,
        t_from: Optional[int] = None,
        t_to: Optional[int] = None,
    ) -> dict[str, list[dict]]:
        clauses = ["job_id = ?"]
        params: list = [job_id]
        if camera_id is not None:
            clauses.append("camera_id = ?")
            params.append(camera_id)
        if t_from is not None:
            clauses.append("t >= ?")
            params.append(t_from)
        if t_to is not None:
            clauses.append("t <= ?")
            params.append(t_to)
        rows = self._conn().execute(
            f"SELECT camera_id, seq, t, value FROM results WHERE {' AND '.join(clauses)}"
            " ORDER BY camera_id, seq",
            params,
        ).fetchall()
        series: dict[str, list[dict]] = {}
        for cam, seq, t, value in rows:
            series.setdefault(cam, []).append({"seq": seq, "t": t, "value": json.loads(value)})
        return series


def _default_snapshot_fetch(rec: CameraRecord) -> Frame:
    """One upstream fetch: direct GET for snapshot endpoints, first part of
    the stream for MJPEG endpoints."""
    if rec.endpoint.mode == MODE_SNAPSHOT:
        return fetch_snapshot_frame(rec.endpoint, camera_id=rec.id)
    session = requests.Session()
    try:
        resp = session.get(rec.endpoint.url, stream=True, timeout=DEFAULT_SNAPSHOT_TTL_S)
        with resp:
            if resp.status_code != 200:
                raise FetchError("http_status", f"HTTP {resp.status_code}", status=resp.status_code)
            boundary = boundary_from_content_type(resp.headers.get("Content-Type", ""))
            if boundary is None:
                raise FetchError("not_multipart", "expected an MJPEG stream")
            parser = MultipartParser(boundary)
            deadline = time.monotonic() + DEFAULT_SNAPSHOT_TTL_S
            for chunk in iter_stream_chunks(resp):
                payloads = parser.feed(chunk)
                if payloads:
                    payload = payloads[0]
                    fmt = detect_format(payload)
                    width = height = None
                    if fmt in (FORMAT_JPEG, FORMAT_PNG):
                        try:
                            width, height = parse_image_dimensions(payload, fmt)
                        except ImageParseError:
                            pass
                    t = now_ms()
                    return Frame(
                        camera_id=rec.id,
                        seq=0,
                        captured_at=t,
                        received_at=t,
                        format=fmt,
                        bytes=payload,
                        width=width,
                        height=height,
                    )
                if time.monotonic() > deadline:
                    break
            raise FetchError("no_frame", "stream produced no complete frame in time")
    finally:
        session.close()
