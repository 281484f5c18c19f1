"""Synthetic camera farm: loopback HTTP servers emulating brand cameras.

Each emulated camera binds its own loopback address (127.x.y.z) on a
shared port and serves its brand's signature path, either as a snapshot
endpoint or as an MJPEG multipart stream paced at the configured fps.
Decoys answer 200 text/html on every path, the classic discovery false
positive. The farm records every request, every payload hash it sends,
and per-frame scene ground truth, so discovery, ingestion, and analyzer
tests all have an oracle to join against.

The farm binds loopback only; scanning it exercises the private-range
safety default without ever touching a routable network.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import select
import socket
import sys
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from . import CamnetError
from .model import MODE_MJPEG, MODE_SNAPSHOT, now_ms
from .scenes import (
    SCENE_STATIC,
    Scene,
    SceneSpec,
    encode_pgm,
    make_scene,
    make_synthetic_jpeg,
    vary_jpeg,
)

MJPEG_BOUNDARY = b"camnetframe"

# Brand -> (snapshot path, mjpeg path). Paths follow the vendors' firmware
# conventions so signature files look like the real thing.
BRAND_PATHS = {
    "axis": ("/axis-cgi/jpg/image.cgi", "/axis-cgi/mjpg/video.cgi"),
    "foscam": ("/snapshot.cgi", "/videostream.cgi"),
    "panasonic": ("/SnapshotJPEG", "/nphMotionJpeg"),
    "hikvision": ("/Streaming/channels/1/picture", "/Streaming/channels/1/preview"),
}


class FarmError(CamnetError):
    pass


@dataclass
class CameraSpec:
    name: str
    brand: str
    mode: str = MODE_SNAPSHOT
    fps: float = 2.0
    fmt: str = "jpeg"  # jpeg | pgm
    scene: SceneSpec = field(default_factory=SceneSpec)

    @classmethod
    def from_json(cls, d: dict) -> "CameraSpec":
        return cls(
            name=str(d["name"]),
            brand=str(d["brand"]),
            mode=d.get("mode", MODE_SNAPSHOT),
            fps=float(d.get("fps", 2.0)),
            fmt=d.get("format", "jpeg"),
            scene=SceneSpec.from_json(d.get("scene") or {}),
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "brand": self.brand,
            "mode": self.mode,
            "fps": self.fps,
            "format": self.fmt,
            "scene": self.scene.to_json(),
        }


@dataclass
class FarmSpec:
    cameras: list[CameraSpec] = field(default_factory=list)
    decoys: int = 0
    base_cidr: str = "127.77.0.0/26"
    port: int = 0  # 0 = pick a free port

    @classmethod
    def from_json(cls, d: dict) -> "FarmSpec":
        return cls(
            cameras=[CameraSpec.from_json(c) for c in d.get("cameras", [])],
            decoys=int(d.get("decoys", 0)),
            base_cidr=d.get("base_cidr", "127.77.0.0/26"),
            port=int(d.get("port", 0)),
        )

    def to_json(self) -> dict:
        return {
            "cameras": [c.to_json() for c in self.cameras],
            "decoys": self.decoys,
            "base_cidr": self.base_cidr,
            "port": self.port,
        }

    def validate(self) -> None:
        net = ipaddress.ip_network(self.base_cidr)
        capacity = net.num_addresses - 2
        if len(self.cameras) + self.decoys > capacity:
            raise FarmError(f"{self.base_cidr} holds {capacity} hosts, spec needs more")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise FarmError("camera names must be unique")
        for c in self.cameras:
            if c.brand not in BRAND_PATHS:
                raise FarmError(f"unknown brand {c.brand!r}")
            if c.mode not in (MODE_SNAPSHOT, MODE_MJPEG):
                raise FarmError(f"unknown mode {c.mode!r}")
            if c.fps <= 0:
                raise FarmError(f"camera {c.name}: fps must be positive")
            if c.fmt not in ("jpeg", "pgm"):
                raise FarmError(f"camera {c.name}: format must be jpeg or pgm")


def load_farm_spec(path: str) -> FarmSpec:
    with open(path, "r", encoding="utf-8") as fh:
        spec = FarmSpec.from_json(json.load(fh))
    spec.validate()
    return spec


class RequestLog:
    """Totally ordered request records, safe under concurrent appends."""

    def __init__(self):
        self._lock = threading.Lock()
        self._rows: list[dict] = []

    def add(self, row: dict) -> None:
        with self._lock:
            self._rows.append(row)

    def snapshot(self) -> list[dict]:
        with self._lock:
            return list(self._rows)

    def count(self) -> int:
        with self._lock:
            return len(self._rows)

    def max_in_flight(self) -> int:
        """Peak number of simultaneously open requests."""
        events = []
        for r in self.snapshot():
            events.append((r["t_start"], 1))
            events.append((r["t_end"], -1))
        events.sort()
        peak = cur = 0
        for _, delta in events:
            cur += delta
            peak = max(peak, cur)
        return peak

    def max_rate(self, window_s: float = 1.0) -> float:
        """Highest request-start rate over any sliding window."""
        starts = sorted(r["t_start"] for r in self.snapshot())
        if not starts:
            return 0.0
        best = 0
        j = 0
        for i in range(len(starts)):
            while starts[i] - starts[j] > window_s:
                j += 1
            best = max(best, i - j + 1)
        return best / window_s


class GroundTruthLog:
    """Per-frame scene truth, keyed by (camera, connection, seq)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._rows: list[dict] = []

    def add(self, camera: str, conn: int, seq: int, truth: dict) -> None:
        with self._lock:
            self._rows.append({"camera": camera, "conn": conn, "seq": seq, **truth})

    def for_camera(self, camera: str) -> list[dict]:
        with self._lock:
            return [r for r in self._rows if r["camera"] == camera]


class SentLog:
    """SHA-256 of every payload the farm actually sent."""

    def __init__(self):
        self._lock = threading.Lock()
        self._rows: list[dict] = []

    def add(self, camera: str, conn: int, seq: int, payload: bytes) -> None:
        with self._lock:
            self._rows.append(
                {
                    "camera": camera,
                    "conn": conn,
                    "seq": seq,
                    "sha256": hashlib.sha256(payload).hexdigest(),
                    "t": time.monotonic(),
                }
            )

    def hashes(self, camera: str, conn: Optional[int] = None) -> list[str]:
        with self._lock:
            return [
                r["sha256"]
                for r in self._rows
                if r["camera"] == camera and (conn is None or r["conn"] == conn)
            ]

    def send_times(self, camera: str, conn: int) -> list[float]:
        with self._lock:
            return [r["t"] for r in self._rows if r["camera"] == camera and r["conn"] == conn]


@dataclass
class EndpointInfo:
    name: str
    role: str  # camera | decoy
    address: str  # ip:port
    brand: Optional[str] = None
    mode: Optional[str] = None
    path: Optional[str] = None
    fps: Optional[float] = None
    fmt: Optional[str] = None
    scene_kind: Optional[str] = None

    @property
    def url(self) -> Optional[str]:
        if self.path is None:
            return None
        return f"http://{self.address}{self.path}"

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "role": self.role,
            "address": self.address,
            "brand": self.brand,
            "mode": self.mode,
            "path": self.path,
            "url": self.url,
            "fps": self.fps,
            "format": self.fmt,
            "scene_kind": self.scene_kind,
        }


class _CameraState:
    """Shared per-camera state for snapshot serving."""

    def __init__(self, spec: CameraSpec):
        self.spec = spec
        self.lock = threading.Lock()
        self.scene = make_scene(spec.scene)
        self.seq = 0
        self.base_jpeg = make_synthetic_jpeg(spec.scene.width, spec.scene.height, seed=spec.scene.seed)
        self.conn_counter = 0

    def next_conn(self) -> int:
        with self.lock:
            self.conn_counter += 1
            return self.conn_counter


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # Stop log_message from writing to stderr during tests.
    def log_message(self, fmt, *args):
        pass

    @property
    def farm(self) -> "Farm":
        return self.server.farm  # type: ignore[attr-defined]

    def do_GET(self):
        role = self.server.role  # type: ignore[attr-defined]
        t_start = time.monotonic()
        path = self.path.split("?", 1)[0]
        status = 404
        try:
            if role == "decoy":
                status = self._serve_decoy()
            else:
                status = self._serve_camera(path)
        except (BrokenPipeError, ConnectionResetError):
            status = -1
        finally:
            self.farm.request_log.add(
                {
                    "t_start": t_start,
                    "t_end": time.monotonic(),
                    "address": self.server.address_str,  # type: ignore[attr-defined]
                    "path": self.path,
                    "status": status,
                }
            )

    def _serve_decoy(self) -> int:
        body = b"<html><head><title>Welcome</title></head><body>It works!</body></html>"
        self.send_response(200)
        self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return 200

    def _serve_camera(self, path: str) -> int:
        state: _CameraState = self.server.camera_state  # type: ignore[attr-defined]
        spec = state.spec
        snapshot_path, mjpeg_path = BRAND_PATHS[spec.brand]
        serving_path = snapshot_path if spec.mode == MODE_SNAPSHOT else mjpeg_path
        if path != serving_path:
            self._send_404()
            return 404
        if spec.mode == MODE_SNAPSHOT:
            return self._serve_snapshot(state)
        return self._serve_mjpeg(state)

    def _send_404(self):
        body = b"not found"
        self.send_response(404)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _render_payload(self, state: _CameraState) -> tuple[bytes, int, str]:
        """Advance the shared scene one frame; returns (payload, seq, content_type)."""
        with state.lock:
            seq = state.seq
            state.seq += 1
            frame, truth = state.scene.render(seq)
        self.farm.ground_truth.add(state.spec.name, 0, seq, truth)
        if state.spec.fmt == "pgm":
            return encode_pgm(frame), seq, "image/x-portable-graymap"
        if state.spec.scene.kind == SCENE_STATIC:
            return state.base_jpeg, seq, "image/jpeg"
        return vary_jpeg(state.base_jpeg, seq), seq, "image/jpeg"

    def _serve_snapshot(self, state: _CameraState) -> int:
        payload, seq, ctype = self._render_payload(state)
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)
        self.farm.sent_log.add(state.spec.name, 0, seq, payload)
        return 200

    def _serve_mjpeg(self, state: _CameraState) -> int:
        spec = state.spec
        conn = state.next_conn()
        self.send_response(200)
        self.send_header(
            "Content-Type", f"multipart/x-mixed-replace; boundary={MJPEG_BOUNDARY.decode()}"
        )
        self.send_header("Connection", "close")
        self.end_headers()
        period = 1.0 / spec.fps
        t0 = time.monotonic()
        seq = 0
        part_ctype = b"image/x-portable-graymap" if spec.fmt == "pgm" else b"image/jpeg"
        while not self.farm.stopping.is_set():
            # stop promptly when the client hangs up, or buffered writes keep
            # "succeeding" and the shared scene advances for a dead viewer
            if self._client_gone():
                break
            # connections share the camera's scene so a second fetch sees motion
            with state.lock:
                scene_seq = state.seq
                state.seq += 1
                frame, truth = state.scene.render(scene_seq)
            if spec.fmt == "pgm":
                payload = encode_pgm(frame)
            elif spec.scene.kind == SCENE_STATIC:
                payload = state.base_jpeg
            else:
                payload = vary_jpeg(state.base_jpeg, scene_seq)
            head = (
                b"--" + MJPEG_BOUNDARY + b"\r\n"
                b"Content-Type: " + part_ctype + b"\r\n"
                b"Content-Length: " + str(len(payload)).encode() + b"\r\n\r\n"
            )
            try:
                self.wfile.write(head + payload + b"\r\n")
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                break
            self.farm.sent_log.add(spec.name, conn, seq, payload)
            self.farm.ground_truth.add(spec.name, conn, seq, truth)
            seq += 1
            target = t0 + seq * period
            delay = target - time.monotonic()
            if delay > 0:
                if self.farm.stopping.wait(delay):
                    break
        self.close_connection = True
        return 200

    def _client_gone(self) -> bool:
        try:
            readable, _, _ = select.select([self.connection], [], [], 0)
            if readable:
                return self.connection.recv(1, socket.MSG_PEEK) == b""
        except (OSError, ValueError):
            return True
        return False

    def do_HEAD(self):
        self.send_response(405)
        self.send_header("Content-Length", "0")
        self.end_headers()


class _FarmServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        # clients hanging up mid-stream is business as usual for a camera
        exc = sys.exc_info()[1]
        if isinstance(exc, (BrokenPipeError, ConnectionResetError, TimeoutError)):
            return
        super().handle_error(request, client_address)


class Farm:
    def __init__(self, spec: FarmSpec):
        self.spec = spec
        self.request_log = RequestLog()
        self.ground_truth = GroundTruthLog()
        self.sent_log = SentLog()
        self.stopping = threading.Event()
        self.endpoints: list[EndpointInfo] = []
        self.port = 0
        self._servers: list[_FarmServer] = []
        self._threads: list[threading.Thread] = []
        self._stopped = False

    @property
    def cidr(self) -> str:
        return self.spec.base_cidr

    def camera_endpoint(self, name: str) -> EndpointInfo:
        for e in self.endpoints:
            if e.name == name:
                return e
        raise KeyError(name)

    def endpoints_json(self) -> dict:
        return {
            "cidr": self.cidr,
            "port": self.port,
            "endpoints": [e.to_json() for e in self.endpoints],
        }

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self.stopping.set()
        for server in self._servers:
            server.shutdown()
            server.server_close()
        for t in self._threads:
            t.join(timeout=2.0)


def spawn_farm(spec: FarmSpec) -> Farm:
    """Bind and start every emulated endpoint; returns a running farm."""
    spec.validate()
    farm = Farm(spec)
    net = ipaddress.ip_network(spec.base_cidr)
    hosts = list(net.hosts())
    idx = 0
    port = spec.port

    def bind(ip: str, role: str, state: Optional[_CameraState]) -> ThreadingHTTPServer:
        nonlocal port
        try:
            server = _FarmServer((ip, port), _Handler)
        except OSError as exc:
            farm.stop()
            raise FarmError(f"cannot bind {ip}:{port}: {exc}") from exc
        if port == 0:
            port = server.server_address[1]
        server.farm = farm  # type: ignore[attr-defined]
        server.role = role  # type: ignore[attr-defined]
        server.camera_state = state  # type: ignore[attr-defined]
        server.address_str = f"{ip}:{server.server_address[1]}"  # type: ignore[attr-defined]
        farm._servers.append(server)
        thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        thread.start()
        farm._threads.append(thread)
        return server

    for cam in spec.cameras:
        ip = str(hosts[idx])
        idx += 1
        state = _CameraState(cam)
        bind(ip, "camera", state)
        snapshot_path, mjpeg_path = BRAND_PATHS[cam.brand]
        farm.endpoints.append(
            EndpointInfo(
                name=cam.name,
                role="camera",
                address=f"{ip}:{port}",
                brand=cam.brand,
                mode=cam.mode,
                path=snapshot_path if cam.mode == MODE_SNAPSHOT else mjpeg_path,
                fps=cam.fps,
                fmt=cam.fmt,
                scene_kind=cam.scene.kind,
            )
        )
    for d in range(spec.decoys):
        ip = str(hosts[idx])
        idx += 1
        bind(ip, "decoy", None)
        farm.endpoints.append(EndpointInfo(name=f"decoy{d:02d}", role="decoy", address=f"{ip}:{port}"))
    farm.port = port
    return farm
