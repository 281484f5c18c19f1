"""Find candidate cameras by probing addresses with brand HTTP signatures.

A probe sends the GET requests each known brand answers; a 200 response
whose content type matches the signature becomes a hit. Hits are then
verified: magic bytes decide whether the payload is an image at all, and
a second fetch after a delay decides whether the source is live. Range
scans fan the probes out under a shared rate limiter and refuse unsafe
targets (wide ranges, non-private addresses) by default.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import requests

from . import CamnetError
from .ingestion import (
    ImageParseError,
    MultipartParser,
    MultipartStreamError,
    boundary_from_content_type,
    detect_format,
    iter_stream_chunks,
    parse_image_dimensions,
)
from .model import (
    FORMAT_JPEG,
    FORMAT_MJPEG,
    FORMAT_PNG,
    KIND_IP,
    MODE_MJPEG,
    MODE_SNAPSHOT,
    CameraRecord,
    LocationInfo,
    QualityInfo,
    ReliabilityInfo,
    StreamEndpoint,
    camera_id_for,
    now_ms,
)

FORMAT_NONE = "none"

DISP_ACCEPTED = "accepted"
DISP_REJECTED_NOT_IMAGE = "rejected_not_image"
DISP_REJECTED_STATIC = "rejected_static"
DISP_PENDING_REVIEW = "pending_review"

DEFAULT_BODY_CAP = 8 * 1024 * 1024
DEFAULT_LIVENESS_DELAY_S = 5.0
DEFAULT_TIMEOUT_S = 4.0
REDIRECT_CAP = 3
FIRST_BYTES_CAP = 64
WIDEST_PREFIX = 16  # refuse ranges wider than /16
_MULTIPART_PREFIX_CAP = 1024 * 1024


class SignatureError(CamnetError):
    pass


class ScanRefused(CamnetError):
    pass


class RefreshEstimationError(CamnetError):
    def __init__(self, message: str, evidence: list):
        super().__init__(message)
        self.evidence = evidence


@dataclass(frozen=True)
class BrandSignature:
    brand: str
    paths: tuple[str, ...]
    expected_content_type_prefixes: tuple[str, ...]


# Paths follow each vendor's firmware conventions.
DEFAULT_SIGNATURES = (
    BrandSignature(
        "axis",
        ("/axis-cgi/jpg/image.cgi", "/axis-cgi/mjpg/video.cgi"),
        ("image/", "multipart/x-mixed-replace"),
    ),
    BrandSignature(
        "foscam",
        ("/snapshot.cgi", "/videostream.cgi"),
        ("image/", "multipart/x-mixed-replace"),
    ),
    BrandSignature(
        "panasonic",
        ("/SnapshotJPEG", "/nphMotionJpeg"),
        ("image/", "multipart/x-mixed-replace"),
    ),
    BrandSignature(
        "hikvision",
        ("/Streaming/channels/1/picture", "/Streaming/channels/1/preview"),
        ("image/", "multipart/x-mixed-replace"),
    ),
)


def signatures_to_json(signatures) -> list[dict]:
    return [
        {
            "brand": s.brand,
            "paths": list(s.paths),
            "expected_content_type_prefixes": list(s.expected_content_type_prefixes),
        }
        for s in signatures
    ]


def parse_signatures(data) -> list[BrandSignature]:
    """Validate and build signatures from parsed JSON (a list of objects)."""
    if not isinstance(data, list) or not data:
        raise SignatureError("signature file must be a non-empty JSON list")
    out = []
    for i, d in enumerate(data):
        try:
            brand = str(d["brand"])
            paths = tuple(str(p) for p in d["paths"])
            prefixes = tuple(str(p) for p in d["expected_content_type_prefixes"])
        except (KeyError, TypeError) as exc:
            raise SignatureError(f"signature #{i}: missing or malformed field ({exc})") from exc
        if not brand:
            raise SignatureError(f"signature #{i}: empty brand")
        if not paths:
            raise SignatureError(f"signature #{i} ({brand}): paths must be non-empty")
        for p in paths:
            if not p.startswith("/"):
                raise SignatureError(f"signature #{i} ({brand}): path {p!r} must begin with '/'")
        if not prefixes:
            raise SignatureError(f"signature #{i} ({brand}): content type prefixes must be non-empty")
        out.append(BrandSignature(brand, paths, prefixes))
    return out


def load_signatures(path: str) -> list[BrandSignature]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SignatureError(f"signature file is not valid JSON: {exc}") from exc
    return parse_signatures(data)


@dataclass(frozen=True)
class ProbeHit:
    address: str  # host:port
    path: str
    brand: str
    status_code: int
    content_type: str
    first_bytes: bytes

    def to_json(self) -> dict:
        return {
            "address": self.address,
            "path": self.path,
            "brand": self.brand,
            "status_code": self.status_code,
            "content_type": self.content_type,
            "first_bytes": self.first_bytes.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProbeHit":
        return cls(
            address=d["address"],
            path=d["path"],
            brand=d["brand"],
            status_code=int(d["status_code"]),
            content_type=d["content_type"],
            first_bytes=bytes.fromhex(d["first_bytes"]),
        )


@dataclass(frozen=True)
class FetchEvidence:
    t: int  # epoch ms
    sha256: Optional[str]
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {"t": self.t, "sha256": self.sha256, "error": self.error}


@dataclass(frozen=True)
class VerificationResult:
    is_image: bool
    detected_format: str  # jpeg | png | mjpeg | none
    is_live: bool
    dims: Optional[tuple[int, int]]
    evidence: tuple[FetchEvidence, ...]

    def to_json(self) -> dict:
        return {
            "is_image": self.is_image,
            "detected_format": self.detected_format,
            "is_live": self.is_live,
            "dims": list(self.dims) if self.dims else None,
            "evidence": [e.to_json() for e in self.evidence],
        }


@dataclass(frozen=True)
class DiscoveryCandidate:
    hit: ProbeHit
    verification: VerificationResult
    disposition: str

    def to_json(self) -> dict:
        return {
            "hit": self.hit.to_json(),
            "verification": self.verification.to_json(),
            "disposition": self.disposition,
        }


class RateLimiter:
    """Token bucket shared by all scan workers; acquire blocks until a token frees."""

    def __init__(self, rate_per_s: float, burst: float = 1.0):
        if rate_per_s <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_per_s
        self.burst = max(1.0, burst)
        self._tokens = self.burst
        self._t = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.burst, self._tokens + (now - self._t) * self.rate)
                self._t = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(min(wait, 0.05))


def _make_session() -> requests.Session:
    session = requests.Session()
    session.max_redirects = REDIRECT_CAP
    return session


def _read_prefix(resp: requests.Response, cap: int) -> bytes:
    buf = bytearray()
    for chunk in iter_stream_chunks(resp, cap):
        buf.extend(chunk)
        if len(buf) >= cap:
            break
    return bytes(buf[:cap])


def probe_address(
    address: str,
    signatures,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    *,
    session: Optional[requests.Session] = None,
    limiter: Optional[RateLimiter] = None,
) -> list[ProbeHit]:
    """One GET per (address, path) until each brand's first hit or exhaustion.

    Network errors on a path are recorded as non-hits and never abort the
    probe of the remaining paths.
    """
    if timeout_s <= 0:
        raise ValueError("timeout must be positive")
    if not signatures:
        raise SignatureError("at least one signature is required")
    own_session = session is None
    http = session or _make_session()
    cache: dict[str, Optional[tuple[int, str, bytes]]] = {}
    hits: list[ProbeHit] = []
    try:
        for sig in signatures:
            for path in sig.paths:
                if path not in cache:
                    if limiter is not None:
                        limiter.acquire()
                    try:
                        resp = http.get(f"http://{address}{path}", timeout=timeout_s, stream=True)
                        with resp:
                            first = _read_prefix(resp, FIRST_BYTES_CAP)
                            cache[path] = (
                                resp.status_code,
                                resp.headers.get("Content-Type", ""),
                                first,
                            )
                    except requests.exceptions.RequestException:
                        cache[path] = None
                info = cache[path]
                if info is None:
                    continue
                status, ctype, first = info
                if status == 200 and any(
                    ctype.lower().startswith(p.lower()) for p in sig.expected_content_type_prefixes
                ):
                    hits.append(
                        ProbeHit(
                            address=address,
                            path=path,
                            brand=sig.brand,
                            status_code=status,
                            content_type=ctype,
                            first_bytes=first,
                        )
                    )
                    break  # first hit for this brand
    finally:
        if own_session:
            http.close()
    return hits


def _fetch_for_verification(
    url: str,
    timeout_s: float,
    body_cap: int,
    session: requests.Session,
    limiter: Optional[RateLimiter],
):
    """Returns (payload, content_type, error). For multipart responses the
    payload is the first complete part; for plain bodies the whole body.
    error is 'too_large' when the cap is exceeded."""
    if limiter is not None:
        limiter.acquire()
    try:
        resp = session.get(url, timeout=timeout_s, stream=True)
    except requests.exceptions.RequestException as exc:
        return None, "", f"network: {exc.__class__.__name__}"
    with resp:
        ctype = resp.headers.get("Content-Type", "")
        if resp.status_code != 200:
            return None, ctype, f"http_status: {resp.status_code}"
        try:
            if ctype.lower().startswith("multipart/"):
                return _first_multipart_payload(resp, ctype, timeout_s), ctype, None
            body = bytearray()
            for chunk in resp.iter_content(65536):
                body.extend(chunk)
                if len(body) > body_cap:
                    return None, ctype, "too_large"
            return bytes(body), ctype, None
        except requests.exceptions.RequestException as exc:
            return None, ctype, f"network: {exc.__class__.__name__}"


def _first_multipart_payload(resp, ctype: str, timeout_s: float) -> bytes:
    boundary = boundary_from_content_type(ctype)
    deadline = time.monotonic() + timeout_s
    if boundary is None:
        # no declared boundary; hash a bounded raw prefix instead
        return _read_prefix(resp, FIRST_BYTES_CAP * 64)
    parser = MultipartParser(boundary)
    seen = 0
    try:
        for chunk in iter_stream_chunks(resp):
            seen += len(chunk)
            payloads = parser.feed(chunk)
            if payloads:
                return payloads[0]
            if time.monotonic() > deadline or seen > _MULTIPART_PREFIX_CAP:
                break
    except MultipartStreamError:
        pass
    return _read_prefix(resp, FIRST_BYTES_CAP * 64)


def verify_candidate(
    hit: ProbeHit,
    liveness_delay_s: float = DEFAULT_LIVENESS_DELAY_S,
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    body_cap: int = DEFAULT_BODY_CAP,
    session: Optional[requests.Session] = None,
    limiter: Optional[RateLimiter] = None,
    sleeper: Callable[[float], None] = time.sleep,
) -> VerificationResult:
    """Fetch the resource twice, liveness_delay apart.

    Magic bytes decide is_image (multipart content types count as MJPEG);
    differing payload hashes decide is_live. A failed second fetch yields
    is_live=False with the failure recorded in the evidence.
    """
    if liveness_delay_s <= 0:
        raise ValueError("liveness delay must be positive")
    own_session = session is None
    http = session or _make_session()
    url = f"http://{hit.address}{hit.path}"
    try:
        payload1, ctype1, err1 = _fetch_for_verification(url, timeout_s, body_cap, http, limiter)
        ev1 = FetchEvidence(
            t=now_ms(),
            sha256=hashlib.sha256(payload1).hexdigest() if payload1 is not None else None,
            error=err1,
        )
        sleeper(liveness_delay_s)
        payload2, _, err2 = _fetch_for_verification(url, timeout_s, body_cap, http, limiter)
        ev2 = FetchEvidence(
            t=now_ms(),
            sha256=hashlib.sha256(payload2).hexdigest() if payload2 is not None else None,
            error=err2,
        )
    finally:
        if own_session:
            http.close()

    multipart = ctype1.lower().startswith("multipart/")
    if payload1 is None:
        detected = FORMAT_NONE
    elif multipart:
        detected = FORMAT_MJPEG
    else:
        fmt = detect_format(payload1)
        detected = fmt if fmt in (FORMAT_JPEG, FORMAT_PNG) else FORMAT_NONE

    is_image = detected != FORMAT_NONE
    is_live = (
        is_image
        and payload1 is not None
        and payload2 is not None
        and ev1.sha256 != ev2.sha256
    )
    dims = None
    if payload1 is not None:
        probe_fmt = detect_format(payload1)
        if probe_fmt in (FORMAT_JPEG, FORMAT_PNG):
            try:
                dims = parse_image_dimensions(payload1, probe_fmt)
            except ImageParseError:
                dims = None
    return VerificationResult(
        is_image=is_image,
        detected_format=detected,
        is_live=is_live,
        dims=dims,
        evidence=(ev1, ev2),
    )


def disposition_for(v: VerificationResult) -> str:
    if not v.is_image:
        return DISP_REJECTED_NOT_IMAGE
    return DISP_ACCEPTED if v.is_live else DISP_PENDING_REVIEW


def scan_range(
    cidr: str,
    signatures,
    *,
    port: int = 80,
    concurrency_limit: int = 8,
    rate_limit: float = 10.0,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    liveness_delay_s: float = DEFAULT_LIVENESS_DELAY_S,
    body_cap: int = DEFAULT_BODY_CAP,
    allow_public: bool = False,
    widest_prefix: int = WIDEST_PREFIX,
) -> list[DiscoveryCandidate]:
    """Probe every address in the range and verify each hit.

    Output order is deterministic: sorted by address then path, regardless
    of completion order. Ranges wider than the safety cap are refused, as
    are non-private ranges unless allow_public is set.
    """
    if rate_limit <= 0:
        raise ValueError("rate_limit must be positive")
    if concurrency_limit < 1:
        raise ValueError("concurrency_limit must be at least 1")
    if not signatures:
        raise SignatureError("at least one signature is required")
    try:
        net = ipaddress.ip_network(cidr, strict=False)
    except ValueError as exc:
        raise ScanRefused(f"invalid range: {exc}") from exc
    if net.version != 4:
        raise ScanRefused("only IPv4 ranges are supported")
    if net.prefixlen < widest_prefix:
        raise ScanRefused(
            f"range {cidr} is wider than the /{widest_prefix} safety cap; split it up"
        )
    if not net.is_private and not allow_public:
        raise ScanRefused(
            f"range {cidr} is not private; pass allow_public to scan it anyway"
        )

    limiter = RateLimiter(rate_limit)

    def work(ip: str) -> list[DiscoveryCandidate]:
        session = _make_session()
        out = []
        try:
            hits = probe_address(f"{ip}:{port}", signatures, timeout_s, session=session, limiter=limiter)
            for hit in hits:
                v = verify_candidate(
                    hit,
                    liveness_delay_s,
                    timeout_s=timeout_s,
                    body_cap=body_cap,
                    session=session,
                    limiter=limiter,
                )
                out.append(DiscoveryCandidate(hit=hit, verification=v, disposition=disposition_for(v)))
        finally:
            session.close()
        return out

    addresses = [str(h) for h in net.hosts()]
    candidates: list[DiscoveryCandidate] = []
    if addresses:
        with ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
            for result in pool.map(work, addresses):
                candidates.extend(result)
    candidates.sort(key=lambda c: (int(ipaddress.ip_address(c.hit.address.rsplit(":", 1)[0])), c.hit.path))
    return candidates


def estimate_refresh_rate(
    endpoint: StreamEndpoint,
    samples: int = 5,
    poll_interval_s: float = 5.0,
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    body_cap: int = DEFAULT_BODY_CAP,
    fetcher: Optional[Callable[[], bytes]] = None,
    clock: Callable[[], float] = time.monotonic,
    sleeper: Callable[[float], None] = time.sleep,
) -> Union[float, str]:
    """Estimate a source's actual refresh rate in frames/second.

    Snapshot endpoints: fetch `samples` payloads `poll_interval_s` apart and
    hash each; the estimate is 1 / median(intervals between hash changes).
    All hashes equal means "static". MJPEG endpoints: time the arrival of
    `samples` frames and return 1 / median(inter-frame gaps).

    `fetcher`, `clock`, and `sleeper` exist so slow sources (minutes per
    frame) can be estimated under a simulated clock in tests.
    """
    if endpoint.mode == MODE_SNAPSHOT:
        if samples < 3:
            raise ValueError("snapshot estimation needs at least 3 samples")
        session = None
        if fetcher is None:
            session = _make_session()

            def fetcher() -> bytes:
                resp = session.get(endpoint.url, timeout=timeout_s, stream=True)
                with resp:
                    if resp.status_code != 200:
                        raise requests.exceptions.HTTPError(f"HTTP {resp.status_code}")
                    return _read_prefix(resp, body_cap)

        observations: list[tuple[float, Optional[str]]] = []
        try:
            for i in range(samples):
                if i > 0:
                    sleeper(poll_interval_s)
                try:
                    payload = fetcher()
                    observations.append((clock(), hashlib.sha256(payload).hexdigest()))
                except Exception as exc:  # noqa: BLE001 - recorded as evidence
                    observations.append((clock(), None))
        finally:
            if session is not None:
                session.close()
        ok = [(t, h) for t, h in observations if h is not None]
        if len(ok) < 2:
            raise RefreshEstimationError("fewer than 2 successful fetches", observations)
        change_times = [t for (t, h), (_, prev) in zip(ok[1:], ok[:-1]) if h != prev]
        if not change_times:
            return "static"
        if len(change_times) < 2:
            raise RefreshEstimationError(
                "only one change observed; poll longer to bracket an interval", observations
            )
        intervals = [b - a for a, b in zip(change_times[:-1], change_times[1:])]
        return 1.0 / statistics.median(intervals)

    # MJPEG: measure inter-frame arrival gaps on a single connection.
    if samples < 2:
        raise ValueError("mjpeg estimation needs at least 2 frames")
    arrivals: list[float] = []
    session = _make_session()
    try:
        resp = session.get(endpoint.url, stream=True, timeout=timeout_s)
        with resp:
            if resp.status_code != 200:
                raise RefreshEstimationError(f"HTTP {resp.status_code}", [])
            boundary = boundary_from_content_type(resp.headers.get("Content-Type", ""))
            if boundary is None:
                raise RefreshEstimationError("response is not an MJPEG stream", [])
            parser = MultipartParser(boundary)
            for chunk in iter_stream_chunks(resp):
                for _ in parser.feed(chunk):
                    arrivals.append(clock())
                if len(arrivals) >= samples:
                    break
    except (requests.exceptions.RequestException, MultipartStreamError) as exc:
        if len(arrivals) < 2:
            raise RefreshEstimationError(str(exc), arrivals) from exc
    finally:
        session.close()
    if len(arrivals) < 2:
        raise RefreshEstimationError("fewer than 2 frames arrived", arrivals)
    gaps = [b - a for a, b in zip(arrivals[:-1], arrivals[1:])]
    return 1.0 / statistics.median(gaps)


def record_from_candidate(
    cand: DiscoveryCandidate,
    *,
    location: Optional[LocationInfo] = None,
    extra_tags: tuple[str, ...] = (),
) -> CameraRecord:
    """Build a registrable CameraRecord from a verified candidate.

    The discovery disposition and brand ride along as tags so operators can
    filter their review queue in the registry.
    """
    v = cand.verification
    if v.detected_format == FORMAT_MJPEG:
        mode = MODE_MJPEG
        declared = FORMAT_MJPEG
    else:
        mode = MODE_SNAPSHOT
        declared = v.detected_format if v.detected_format != FORMAT_NONE else None
    url = f"http://{cand.hit.address}{cand.hit.path}"
    width, height = (v.dims if v.dims else (None, None))
    return CameraRecord(
        id=camera_id_for(url, mode),
        kind=KIND_IP,
        endpoint=StreamEndpoint(url=url, mode=mode, declared_format=declared),
        location=location or LocationInfo(),
        quality=QualityInfo(width=width, height=height),
        reliability=ReliabilityInfo(uptime_fraction=1.0, last_seen=now_ms(), observation_window=0),
        tags=frozenset({f"disposition:{cand.disposition}", f"brand:{cand.hit.brand}"} | set(extra_tags)),
    )
