"""Shared domain types, geometric helpers, and the canonical JSON forms.

All types are immutable values; the operations here are pure. Timestamps
are UTC epoch milliseconds (ints) everywhere. The JSON shapes produced by
the ``*_to_json`` / ``*_from_json`` pairs are the canonical serialization
used by registry persistence, the REST API, and CLI files.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import urlparse

# Earth as a sphere; placement decisions need ~1% accuracy only.
EARTH_RADIUS_KM = 6371.0088

KIND_IP = "ip_camera"
KIND_NON_IP = "non_ip_camera"
CAMERA_KINDS = (KIND_IP, KIND_NON_IP)

MODE_SNAPSHOT = "snapshot_poll"
MODE_MJPEG = "mjpeg_stream"
ENDPOINT_MODES = (MODE_SNAPSHOT, MODE_MJPEG)

PROV_OWNER = "owner_provided"
PROV_GEOCODED = "geocoded_address"
PROV_IP = "ip_derived"
PROV_UNKNOWN = "unknown"
PROVENANCES = (PROV_OWNER, PROV_GEOCODED, PROV_IP, PROV_UNKNOWN)

FORMAT_JPEG = "jpeg"
FORMAT_PNG = "png"
FORMAT_MJPEG = "mjpeg"
FORMAT_UNKNOWN = "unknown"
FRAME_FORMATS = (FORMAT_JPEG, FORMAT_PNG, FORMAT_UNKNOWN)

# Allowed clock skew when checking "last_seen is not in the future".
_FUTURE_SKEW_MS = 1000


def now_ms() -> int:
    """Current UTC time as epoch milliseconds."""
    return int(time.time() * 1000)


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def is_valid(self) -> bool:
        return (
            math.isfinite(self.latitude)
            and math.isfinite(self.longitude)
            and -90.0 <= self.latitude <= 90.0
            and -180.0 <= self.longitude <= 180.0
        )


@dataclass(frozen=True)
class LocationInfo:
    point: Optional[GeoPoint] = None
    provenance: str = PROV_UNKNOWN
    country: Optional[str] = None
    state: Optional[str] = None
    city: Optional[str] = None


@dataclass(frozen=True)
class StreamEndpoint:
    url: str
    mode: str
    declared_format: Optional[str] = None


@dataclass(frozen=True)
class QualityInfo:
    width: Optional[int] = None
    height: Optional[int] = None
    estimated_refresh_rate: Optional[float] = None


@dataclass(frozen=True)
class ReliabilityInfo:
    uptime_fraction: float = 1.0
    last_seen: int = 0
    observation_window: int = 0


@dataclass(frozen=True)
class CameraRecord:
    id: str
    kind: str
    endpoint: StreamEndpoint
    location: LocationInfo = field(default_factory=LocationInfo)
    quality: QualityInfo = field(default_factory=QualityInfo)
    reliability: ReliabilityInfo = field(default_factory=ReliabilityInfo)
    tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Frame:
    camera_id: str
    seq: int
    captured_at: int
    received_at: int
    format: str
    bytes: bytes
    width: Optional[int] = None
    height: Optional[int] = None


def camera_id_for(url: str, mode: str) -> str:
    """Deterministic camera id: content hash of (url, mode).

    Re-discovering the same endpoint always yields the same id, making
    registration idempotent.
    """
    digest = hashlib.sha256(f"{url}\n{mode}".encode("utf-8")).hexdigest()
    return digest[:16]


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points, in kilometers."""
    lat1 = math.radians(a.latitude)
    lat2 = math.radians(b.latitude)
    dlat = lat2 - lat1
    dlon = math.radians(b.longitude - a.longitude)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _url_is_absolute_http(url: str) -> bool:
    try:
        parsed = urlparse(url)
    except ValueError:
        return False
    return parsed.scheme in ("http", "https") and bool(parsed.netloc)


def validate_camera_record(rec: CameraRecord, *, now: Optional[int] = None) -> list[str]:
    """Check every type invariant; violations come back as machine-readable codes.

    An empty list means the record is valid. Violations are data, not
    failures: nothing here raises.
    """
    violations: list[str] = []
    if not rec.id:
        violations.append("id_empty")
    if rec.kind not in CAMERA_KINDS:
        violations.append("invalid_kind")

    ep = rec.endpoint
    if not _url_is_absolute_http(ep.url):
        violations.append("url_not_absolute")
    if ep.mode not in ENDPOINT_MODES:
        violations.append("invalid_mode")
    elif ep.mode == MODE_MJPEG and ep.declared_format not in (None, FORMAT_MJPEG):
        violations.append("format_mode_mismatch")

    loc = rec.location
    if loc.provenance not in PROVENANCES:
        violations.append("invalid_provenance")
    if loc.point is None:
        if loc.provenance != PROV_UNKNOWN and loc.provenance in PROVENANCES:
            violations.append("point_missing")
    else:
        p = loc.point
        if not (math.isfinite(p.latitude) and math.isfinite(p.longitude)):
            violations.append("coord_not_finite")
        else:
            if not -90.0 <= p.latitude <= 90.0:
                violations.append("lat_out_of_range")
            if not -180.0 <= p.longitude <= 180.0:
                violations.append("lon_out_of_range")

    q = rec.quality
    if (q.width is None) != (q.height is None):
        violations.append("resolution_incomplete")
    if q.width is not None and q.width <= 0:
        violations.append("width_not_positive")
    if q.height is not None and q.height <= 0:
        violations.append("height_not_positive")
    if q.estimated_refresh_rate is not None and not q.estimated_refresh_rate > 0:
        violations.append("refresh_rate_not_positive")

    r = rec.reliability
    if not 0.0 <= r.uptime_fraction <= 1.0:
        violations.append("uptime_out_of_range")
    if r.last_seen > (now_ms() if now is None else now) + _FUTURE_SKEW_MS:
        violations.append("last_seen_in_future")
    if r.observation_window < 0:
        violations.append("observation_window_negative")

    return violations


# ---------------------------------------------------------------------------
# Canonical JSON
# ---------------------------------------------------------------------------

def geo_point_to_json(p: Optional[GeoPoint]):
    if p is None:
        return None
    return {"latitude": p.latitude, "longitude": p.longitude}


def geo_point_from_json(d) -> Optional[GeoPoint]:
    if d is None:
        return None
    return GeoPoint(latitude=float(d["latitude"]), longitude=float(d["longitude"]))


def camera_record_to_json(rec: CameraRecord) -> dict:
    return {
        "id": rec.id,
        "kind": rec.kind,
        "endpoint": {
            "url": rec.endpoint.url,
            "mode": rec.endpoint.mode,
            "declared_format": rec.endpoint.declared_format,
        },
        "location": {
            "point": geo_point_to_json(rec.location.point),
            "provenance": rec.location.provenance,
            "country": rec.location.country,
            "state": rec.location.state,
            "city": rec.location.city,
        },
        "quality": {
            "width": rec.quality.width,
            "height": rec.quality.height,
            "estimated_refresh_rate": rec.quality.estimated_refresh_rate,
        },
        "reliability": {
            "uptime_fraction": rec.reliability.uptime_fraction,
            "last_seen": rec.reliability.last_seen,
            "observation_window": rec.reliability.observation_window,
        },
        "tags": sorted(rec.tags),
    }


def camera_record_from_json(d: dict) -> CameraRecord:
    ep = d["endpoint"]
    loc = d.get("location") or {}
    q = d.get("quality") or {}
    r = d.get("reliability") or {}
    return CameraRecord(
        id=str(d["id"]),
        kind=str(d["kind"]),
        endpoint=StreamEndpoint(
            url=str(ep["url"]),
            mode=str(ep["mode"]),
            declared_format=ep.get("declared_format"),
        ),
        location=LocationInfo(
            point=geo_point_from_json(loc.get("point")),
            provenance=str(loc.get("provenance", PROV_UNKNOWN)),
            country=loc.get("country"),
            state=loc.get("state"),
            city=loc.get("city"),
        ),
        quality=QualityInfo(
            width=q.get("width"),
            height=q.get("height"),
            estimated_refresh_rate=q.get("estimated_refresh_rate"),
        ),
        reliability=ReliabilityInfo(
            uptime_fraction=float(r.get("uptime_fraction", 1.0)),
            last_seen=int(r.get("last_seen", 0)),
            observation_window=int(r.get("observation_window", 0)),
        ),
        tags=frozenset(d.get("tags", ())),
    )


def canonical_json(obj) -> str:
    """Stable byte form: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
