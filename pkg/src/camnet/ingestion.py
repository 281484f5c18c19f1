"""Retrieve visual data from endpoints.

Snapshot polling, incremental MJPEG multipart parsing, byte-level format
detection, and JPEG/PNG dimension extraction without a full decode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import requests

from . import CamnetError
from .model import (
    FORMAT_JPEG,
    FORMAT_PNG,
    FORMAT_UNKNOWN,
    MODE_MJPEG,
    MODE_SNAPSHOT,
    Frame,
    StreamEndpoint,
    now_ms,
)

JPEG_MAGIC = b"\xff\xd8\xff"
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

DEFAULT_BODY_CAP = 8 * 1024 * 1024
DEFAULT_BUFFER_CAP = 16 * 1024 * 1024
DEFAULT_TIMEOUT_S = 4.0
CONSECUTIVE_FAILURE_LIMIT = 10

# JPEG start-of-frame markers carrying dimensions (baseline, extended, progressive).
_SOF_MARKERS = (0xC0, 0xC1, 0xC2)
# Markers with no length field.
_STANDALONE = {0x01, 0xD8} | set(range(0xD0, 0xD8))


class ImageParseError(CamnetError):
    """Payload could not be parsed; carries the byte offset that failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class FetchError(CamnetError):
    """A snapshot or stream fetch failed; `reason` is machine-readable."""

    def __init__(self, reason: str, message: str = "", status: Optional[int] = None):
        super().__init__(message or reason)
        self.reason = reason
        self.status = status


class MultipartStreamError(CamnetError):
    pass


def detect_format(data: bytes) -> str:
    if data.startswith(JPEG_MAGIC):
        return FORMAT_JPEG
    if data.startswith(PNG_MAGIC):
        return FORMAT_PNG
    return FORMAT_UNKNOWN


def parse_image_dimensions(data: bytes, fmt: str) -> tuple[int, int]:
    """(width, height) from header structures only; no pixel decode."""
    if fmt == FORMAT_JPEG:
        return _jpeg_dimensions(data)
    if fmt == FORMAT_PNG:
        return _png_dimensions(data)
    raise ValueError(f"unsupported format: {fmt}")


def _jpeg_dimensions(data: bytes) -> tuple[int, int]:
    if not data.startswith(b"\xff\xd8"):
        raise ImageParseError("missing JPEG SOI marker", 0)
    pos = 2
    n = len(data)
    while True:
        if pos >= n:
            raise ImageParseError("truncated before SOF marker", pos)
        if data[pos] != 0xFF:
            raise ImageParseError("expected marker byte 0xFF", pos)
        # skip fill bytes
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise ImageParseError("truncated inside marker", pos)
        marker = data[pos]
        pos += 1
        if marker in _STANDALONE:
            continue
        if marker == 0xD9:  # EOI without any SOF
            raise ImageParseError("end of image before SOF marker", pos)
        if pos + 2 > n:
            raise ImageParseError("truncated segment length", pos)
        seg_len = int.from_bytes(data[pos : pos + 2], "big")
        if seg_len < 2:
            raise ImageParseError("invalid segment length", pos)
        if marker in _SOF_MARKERS:
            if pos + 7 > n:
                raise ImageParseError("truncated SOF segment", pos)
            height = int.from_bytes(data[pos + 3 : pos + 5], "big")
            width = int.from_bytes(data[pos + 5 : pos + 7], "big")
            return width, height
        pos += seg_len


def _png_dimensions(data: bytes) -> tuple[int, int]:
    if not data.startswith(PNG_MAGIC):
        raise ImageParseError("missing PNG signature", 0)
    if len(data) < 24:
        raise ImageParseError("truncated before IHDR", len(data))
    if data[12:16] != b"IHDR":
        raise ImageParseError("first chunk is not IHDR", 12)
    width = int.from_bytes(data[16:20], "big")
    height = int.from_bytes(data[20:24], "big")
    return width, height


def iter_stream_chunks(resp: requests.Response, chunk_size: int = 8192):
    """Yield body chunks as they arrive on the socket.

    iter_content blocks until a full chunk accumulates on unchunked bodies,
    which turns a slow MJPEG stream into multi-second batches; read1 returns
    whatever is available. Errors surface as requests exceptions either way.
    """
    raw = resp.raw
    if not hasattr(raw, "read1"):
        yield from resp.iter_content(chunk_size)
        return
    while True:
        try:
            chunk = raw.read1(chunk_size)
        except requests.exceptions.RequestException:
            raise
        except Exception as exc:  # urllib3/socket errors from the raw reader
            raise requests.exceptions.ConnectionError(str(exc)) from exc
        if not chunk:
            return
        yield chunk


def boundary_from_content_type(content_type: str) -> Optional[bytes]:
    """Extract the boundary parameter from a multipart Content-Type."""
    for part in content_type.split(";"):
        part = part.strip()
        if part.lower().startswith("boundary="):
            value = part[len("boundary=") :].strip().strip('"')
            if value:
                return value.encode("latin-1")
    return None


PHASE_SEEKING = "seeking_boundary"
PHASE_HEADERS = "reading_headers"
PHASE_BODY = "reading_body"


class MultipartParser:
    """Incremental multipart/x-mixed-replace part extractor.

    Emits each part body exactly once, bit-identical to the sender's
    payload, regardless of how the stream is fragmented into chunks.
    Honors part Content-Length when present; otherwise scans for the next
    boundary and strips the protocol CRLF that precedes it.
    """

    def __init__(self, boundary: bytes | str, buffer_cap: int = DEFAULT_BUFFER_CAP):
        if isinstance(boundary, str):
            boundary = boundary.encode("latin-1")
        # Some senders put the -- prefix into the declared parameter.
        self._delim = b"--" + boundary.lstrip(b"-")
        self._cap = buffer_cap
        self._buf = bytearray()
        self._scan_from = 0
        self._expected_len: Optional[int] = None
        self.phase = PHASE_SEEKING
        self.frames_emitted = 0
        self.failed = False
        self.finished = False

    def feed(self, chunk: bytes) -> list[bytes]:
        if self.failed:
            raise MultipartStreamError("parser previously failed; no further frames")
        if self.finished or not chunk:
            return []
        self._buf.extend(chunk)
        out: list[bytes] = []
        while True:
            if self.phase == PHASE_SEEKING:
                if not self._step_seek():
                    break
            elif self.phase == PHASE_HEADERS:
                if not self._step_headers():
                    break
            else:
                payload = self._step_body()
                if payload is None:
                    break
                out.append(payload)
                self.frames_emitted += 1
            if self.finished:
                break
        if len(self._buf) > self._cap:
            self.failed = True
            raise MultipartStreamError(
                f"buffer exceeded {self._cap} bytes without a boundary"
            )
        return out

    def _step_seek(self) -> bool:
        i = self._buf.find(self._delim, self._scan_from)
        if i < 0:
            # nothing before a potential partial delimiter is ever useful
            keep = len(self._delim) - 1
            if len(self._buf) > keep:
                del self._buf[: len(self._buf) - keep]
            self._scan_from = 0
            return False
        end = i + len(self._delim)
        # need two more bytes to distinguish terminator / CRLF
        if len(self._buf) < end + 2:
            return False
        if self._buf[end : end + 2] == b"--":
            self.finished = True
            return True
        if self._buf[end : end + 2] == b"\r\n":
            end += 2
        elif self._buf[end : end + 1] == b"\n":
            end += 1
        del self._buf[:end]
        self._scan_from = 0
        self.phase = PHASE_HEADERS
        return True

    def _step_headers(self) -> bool:
        i = self._buf.find(b"\r\n\r\n")
        j = self._buf.find(b"\n\n")
        if i < 0 and j < 0:
            return False
        if i >= 0 and (j < 0 or i < j):
            raw, skip = self._buf[:i], i + 4
        else:
            raw, skip = self._buf[:j], j + 2
        self._expected_len = None
        for line in bytes(raw).split(b"\n"):
            name, _, value = line.strip().partition(b":")
            if name.strip().lower() == b"content-length":
                try:
                    self._expected_len = int(value.strip())
                except ValueError:
                    self._expected_len = None
        del self._buf[:skip]
        self._scan_from = 0
        self.phase = PHASE_BODY
        return True

    def _step_body(self) -> Optional[bytes]:
        if self._expected_len is not None:
            if len(self._buf) < self._expected_len:
                return None
            payload = bytes(self._buf[: self._expected_len])
            del self._buf[: self._expected_len]
        else:
            i = self._buf.find(self._delim, self._scan_from)
            if i < 0:
                self._scan_from = max(0, len(self._buf) - len(self._delim) + 1)
                return None
            payload = bytes(self._buf[:i])
            if payload.endswith(b"\r\n"):
                payload = payload[:-2]
            elif payload.endswith(b"\n"):
                payload = payload[:-1]
            del self._buf[:i]
        self._scan_from = 0
        self.phase = PHASE_SEEKING
        return payload


def _frame_from_payload(camera_id: str, seq: int, payload: bytes) -> Frame:
    fmt = detect_format(payload)
    width = height = None
    if fmt in (FORMAT_JPEG, FORMAT_PNG):
        try:
            width, height = parse_image_dimensions(payload, fmt)
        except ImageParseError:
            pass
    t = now_ms()
    return Frame(
        camera_id=camera_id,
        seq=seq,
        captured_at=t,
        received_at=t,
        format=fmt,
        bytes=payload,
        width=width,
        height=height,
    )


def fetch_snapshot_frame(
    endpoint: StreamEndpoint,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    *,
    body_cap: int = DEFAULT_BODY_CAP,
    session: Optional[requests.Session] = None,
    camera_id: str = "",
    seq: int = 0,
) -> Frame:
    """One GET against a snapshot endpoint; capture time falls back to receive time."""
    if endpoint.mode != MODE_SNAPSHOT:
        raise ValueError("fetch_snapshot_frame requires a snapshot_poll endpoint")
    http = session or requests
    try:
        resp = http.get(endpoint.url, timeout=timeout_s, stream=True)
    except requests.exceptions.Timeout as exc:
        raise FetchError("timeout", str(exc)) from exc
    except requests.exceptions.RequestException as exc:
        raise FetchError("network", str(exc)) from exc
    with resp:
        if resp.status_code != 200:
            raise FetchError("http_status", f"HTTP {resp.status_code}", status=resp.status_code)
        try:
            body = _read_capped(resp, body_cap)
        except requests.exceptions.Timeout as exc:
            raise FetchError("timeout", str(exc)) from exc
        except requests.exceptions.RequestException as exc:
            raise FetchError("network", str(exc)) from exc
    if body is None:
        raise FetchError("too_large", f"body exceeded {body_cap} bytes")
    frame = _frame_from_payload(camera_id, seq, body)
    if frame.format == FORMAT_UNKNOWN:
        raise FetchError("unknown_format", "payload is neither JPEG nor PNG")
    if not frame.bytes:
        raise FetchError("empty_body", "empty response body")
    return frame


def _read_capped(resp: requests.Response, cap: int) -> Optional[bytes]:
    """Body bytes, or None once the cap is exceeded."""
    chunks = []
    total = 0
    for chunk in resp.iter_content(65536):
        total += len(chunk)
        if total > cap:
            return None
        chunks.append(chunk)
    return b"".join(chunks)


@dataclass
class AcquisitionSummary:
    camera_id: str
    mode: str
    frames_delivered: int = 0
    errors: int = 0
    effective_fps: float = 0.0
    ticks_expected: int = 0
    ticks_skipped: int = 0
    aborted_early: bool = False
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "mode": self.mode,
            "frames_delivered": self.frames_delivered,
            "errors": self.errors,
            "effective_fps": self.effective_fps,
            "ticks_expected": self.ticks_expected,
            "ticks_skipped": self.ticks_skipped,
            "aborted_early": self.aborted_early,
            "detail": self.detail,
        }


def poll_stream(
    endpoint: StreamEndpoint,
    fps: float,
    duration_s: float,
    sink: Callable[[Frame], None],
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    failure_limit: int = CONSECUTIVE_FAILURE_LIMIT,
    body_cap: int = DEFAULT_BODY_CAP,
    buffer_cap: int = DEFAULT_BUFFER_CAP,
    should_stop: Optional[Callable[[], bool]] = None,
    camera_id: str = "",
) -> AcquisitionSummary:
    """Acquire frames for `duration_s` at up to `fps`, invoking sink per frame.

    Snapshot endpoints are fetched on a fixed-rate tick schedule; ticks that
    fall while a fetch is still in flight are skipped, never queued, and the
    summary accounts for every tick. MJPEG endpoints are read continuously
    and delivery is capped at `fps` (extras dropped, newest kept). Frames
    carry strictly increasing seq starting at 0. `failure_limit` consecutive
    fetch failures abort early with a partial summary.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    stop = should_stop or (lambda: False)
    if endpoint.mode == MODE_SNAPSHOT:
        return _poll_snapshots(
            endpoint, fps, duration_s, sink, timeout_s, failure_limit, body_cap, stop, camera_id
        )
    return _poll_mjpeg(
        endpoint, fps, duration_s, sink, timeout_s, failure_limit, buffer_cap, stop, camera_id
    )


def _poll_snapshots(endpoint, fps, duration_s, sink, timeout_s, failure_limit, body_cap, stop, camera_id):
    period = 1.0 / fps
    n_ticks = max(1, int(duration_s * fps + 1e-9))
    summary = AcquisitionSummary(camera_id=camera_id, mode=MODE_SNAPSHOT, ticks_expected=n_ticks)
    session = requests.Session()
    t0 = time.monotonic()
    k = 0
    seq = 0
    consecutive = 0
    try:
        while k < n_ticks:
            if stop():
                summary.aborted_early = True
                summary.detail = "stopped"
                break
            target = t0 + k * period
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            try:
                frame = fetch_snapshot_frame(
                    endpoint, timeout_s, body_cap=body_cap, session=session, camera_id=camera_id, seq=seq
                )
                sink(frame)
                summary.frames_delivered += 1
                seq += 1
                consecutive = 0
            except FetchError as exc:
                summary.errors += 1
                consecutive += 1
                summary.detail = exc.reason
                if consecutive >= failure_limit:
                    summary.aborted_early = True
                    k += 1
                    break
            now = time.monotonic()
            next_k = k + 1
            if now > t0 + next_k * period:
                next_k = int((now - t0) / period) + 1
            summary.ticks_skipped += max(0, min(next_k, n_ticks) - k - 1)
            k = next_k
        # unreached ticks count as skipped so accounting always balances
        summary.ticks_skipped += n_ticks - min(k, n_ticks)
    finally:
        session.close()
    summary.effective_fps = summary.frames_delivered / duration_s
    return summary


def _poll_mjpeg(endpoint, fps, duration_s, sink, timeout_s, failure_limit, buffer_cap, stop, camera_id):
    summary = AcquisitionSummary(camera_id=camera_id, mode=MODE_MJPEG)
    session = requests.Session()
    t0 = time.monotonic()
    deadline = t0 + duration_s
    tokens = 1.0
    token_cap = max(2.0, fps * 0.25)
    last_refill = t0
    seq = 0
    consecutive = 0
    try:
        while time.monotonic() < deadline and not stop():
            got_frames_this_connection = False
            try:
                resp = session.get(endpoint.url, stream=True, timeout=timeout_s)
                with resp:
                    if resp.status_code != 200:
                        raise FetchError("http_status", f"HTTP {resp.status_code}", status=resp.status_code)
                    boundary = boundary_from_content_type(resp.headers.get("Content-Type", ""))
                    if boundary is None:
                        raise FetchError("not_multipart", "response lacks a multipart boundary")
                    parser = MultipartParser(boundary, buffer_cap=buffer_cap)
                    for chunk in iter_stream_chunks(resp):
                        if time.monotonic() >= deadline or stop():
                            break
                        payloads = parser.feed(chunk)
                        if not payloads:
                            continue
                        got_frames_this_connection = True
                        consecutive = 0
                        now = time.monotonic()
                        tokens = min(token_cap, tokens + (now - last_refill) * fps)
                        last_refill = now
                        take = min(len(payloads), int(tokens))
                        if take > 0:
                            for payload in payloads[-take:]:
                                sink(_frame_from_payload(camera_id, seq, payload))
                                summary.frames_delivered += 1
                                seq += 1
                            tokens -= take
            except (requests.exceptions.RequestException, FetchError, MultipartStreamError) as exc:
                summary.errors += 1
                consecutive += 1
                summary.detail = exc.reason if isinstance(exc, FetchError) else str(exc)
                if consecutive >= failure_limit:
                    summary.aborted_early = True
                    break
                time.sleep(min(0.2, max(0.0, deadline - time.monotonic())))
            else:
                # server closed the stream; an instant EOF with no frames is a failure
                if not got_frames_this_connection:
                    summary.errors += 1
                    consecutive += 1
                    summary.detail = "stream ended without frames"
                    if consecutive >= failure_limit:
                        summary.aborted_early = True
                        break
                    time.sleep(min(0.2, max(0.0, deadline - time.monotonic())))
    finally:
        session.close()
    if stop() and not summary.aborted_early:
        summary.aborted_early = True
        summary.detail = "stopped"
    summary.effective_fps = summary.frames_delivered / duration_s
    return summary
