import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from camnet.scenes import SceneSpec
from camnet.testbed import CameraSpec, FarmSpec, spawn_farm


class FixtureServer:
    """Minimal HTTP server for oddball fixtures (oversize bodies, slow
    responses, html-on-200). Routes map path -> (status, content_type,
    body_fn(request_count) or bytes, delay_s)."""

    def __init__(self):
        self.routes = {}
        self.hits = {}
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def do_GET(self):
                path = self.path.split("?", 1)[0]
                with outer._lock:
                    outer.hits[path] = outer.hits.get(path, 0) + 1
                    count = outer.hits[path]
                route = outer.routes.get(path)
                if route is None:
                    self.send_response(404)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                status, ctype, body, delay = route
                if delay:
                    time.sleep(delay)
                payload = body(count) if callable(body) else body
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                try:
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def url(self, path: str) -> str:
        return f"http://127.0.0.1:{self.port}{path}"

    def add(self, path, status=200, content_type="application/octet-stream", body=b"", delay=0.0):
        self.routes[path] = (status, content_type, body, delay)

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def fixture_server():
    server = FixtureServer()
    yield server
    server.stop()


def small_farm_spec(base_cidr="127.81.0.0/28") -> FarmSpec:
    return FarmSpec(
        cameras=[
            CameraSpec(
                name="snapcam",
                brand="axis",
                mode="snapshot_poll",
                fps=5.0,
                fmt="jpeg",
                scene=SceneSpec(kind="moving_blobs", count=2, size_px=8, seed=3),
            ),
            CameraSpec(
                name="streamcam",
                brand="foscam",
                mode="mjpeg_stream",
                fps=10.0,
                fmt="pgm",
                scene=SceneSpec(kind="moving_blobs", count=4, size_px=8, seed=7),
            ),
            CameraSpec(
                name="staticcam",
                brand="panasonic",
                mode="snapshot_poll",
                fps=1.0,
                fmt="jpeg",
                scene=SceneSpec(kind="static", seed=1),
            ),
        ],
        decoys=2,
        base_cidr=base_cidr,
    )


@pytest.fixture(scope="module")
def small_farm():
    farm = spawn_farm(small_farm_spec())
    yield farm
    farm.stop()
