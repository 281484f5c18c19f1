"""Procedural grayscale scenes with known ground truth.

Used by the emulated camera farm: moving-blob scenes for motion analysis
oracles, region-change scenes for before/after comparison oracles, and
static scenes for liveness negatives. Also builds the synthetic image
payloads the farm serves: binary PGM for the analyzable path and
structurally valid (non-decodable) JPEG for discovery fixtures.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SCENE_STATIC = "static"
SCENE_MOVING_BLOBS = "moving_blobs"
SCENE_REGION_CHANGE = "region_change"

BG_LEVEL = 30
BLOB_LEVELS = (140, 220)  # alternate per frame so the whole swept region differs
REGION_BASE = 60
REGION_DELTA = 120


@dataclass
class SceneSpec:
    kind: str = SCENE_STATIC
    width: int = 160
    height: int = 120
    count: int = 4
    size_px: int = 8
    fraction: float = 0.4
    seed: int = 0

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        return cls(
            kind=d.get("kind", SCENE_STATIC),
            width=int(d.get("width", 160)),
            height=int(d.get("height", 120)),
            count=int(d.get("count", 4)),
            size_px=int(d.get("size_px", 8)),
            fraction=float(d.get("fraction", 0.4)),
            seed=int(d.get("seed", 0)),
        )

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "width": self.width,
            "height": self.height,
            "count": self.count,
            "size_px": self.size_px,
            "fraction": self.fraction,
            "seed": self.seed,
        }


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Binary PGM (P5), maxval 255."""
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.astype(np.uint8).tobytes()


def make_scene(spec: SceneSpec) -> "Scene":
    if spec.kind == SCENE_MOVING_BLOBS:
        return MovingBlobScene(spec)
    if spec.kind == SCENE_REGION_CHANGE:
        return RegionChangeScene(spec)
    if spec.kind == SCENE_STATIC:
        return StaticScene(spec)
    raise ValueError(f"unknown scene kind: {spec.kind}")


class Scene:
    """Stateful frame source; render(seq) must be called with seq = 0, 1, 2, ..."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self._next_seq = 0

    def render(self, seq: int) -> tuple[np.ndarray, dict]:
        if seq != self._next_seq:
            raise ValueError(f"scene frames must be rendered in order (got {seq}, want {self._next_seq})")
        self._next_seq += 1
        return self._render(seq)

    def _render(self, seq: int) -> tuple[np.ndarray, dict]:
        raise NotImplementedError


class StaticScene(Scene):
    def __init__(self, spec: SceneSpec):
        super().__init__(spec)
        rng = np.random.default_rng(spec.seed)
        self._frame = rng.integers(0, 256, (spec.height, spec.width), dtype=np.uint8)

    def _render(self, seq):
        return self._frame, {"static": True, "blob_count": 0, "changed_fraction": 0.0}


class RegionChangeScene(Scene):
    """Alternates a base frame with one whose bottom region is repainted.

    Every odd-to-even and even-to-odd frame pair differs in exactly
    `rows / height` of its pixels, recorded as ground truth.
    """

    def __init__(self, spec: SceneSpec):
        super().__init__(spec)
        self._base = np.full((spec.height, spec.width), REGION_BASE, dtype=np.uint8)
        self._rows = max(1, round(spec.fraction * spec.height))
        self._changed = self._base.copy()
        self._changed[spec.height - self._rows :, :] = REGION_BASE + REGION_DELTA
        self.exact_fraction = self._rows / spec.height

    def _render(self, seq):
        frame = self._changed if seq % 2 == 1 else self._base
        truth = {
            "blob_count": 1 if seq > 0 else 0,
            "changed_fraction": self.exact_fraction if seq > 0 else 0.0,
        }
        return frame, truth


class MovingBlobScene(Scene):
    """`count` square blobs, each confined to its own grid cell.

    Construction guarantees the frame-difference motion oracle: blob
    intensity alternates between two levels far from the background, steps
    are at most the blob side so the swept region stays 4-connected, cells
    keep blobs (and their swept regions) pairwise separated, and a margin
    keeps every blob clear of the canvas border.

    Bounce trajectories recur within a few frames, so the top row carries a
    frame-counter strip (the way real cameras burn in a timestamp): one
    isolated pixel per set bit of seq. No two frames within 2^(width/2)
    are byte-identical, which keeps two-fetch liveness checks honest, and
    the single-pixel diffs stay far below any analyzer's min blob size.
    """

    MARGIN = 3

    def __init__(self, spec: SceneSpec):
        super().__init__(spec)
        if spec.size_px < 4:
            raise ValueError("blob side must be at least 4 px")
        if spec.count < 1:
            raise ValueError("need at least one blob")
        rng = np.random.default_rng(spec.seed)
        cell = spec.size_px + 2 * self.MARGIN + 4
        gx = max(1, spec.width // cell)
        gy = max(1, spec.height // cell)
        if gx * gy < spec.count:
            raise ValueError(
                f"canvas {spec.width}x{spec.height} fits at most {gx * gy} blobs of side {spec.size_px}"
            )
        cells = [(i, j) for j in range(gy) for i in range(gx)]
        rng.shuffle(cells)
        self._blobs = []
        for i, j in cells[: spec.count]:
            x0 = i * cell + self.MARGIN
            y0 = j * cell + self.MARGIN
            x1 = x0 + cell - 2 * self.MARGIN - spec.size_px
            y1 = y0 + cell - 2 * self.MARGIN - spec.size_px
            self._blobs.append(
                {
                    "x": int(rng.integers(x0, x1 + 1)),
                    "y": int(rng.integers(y0, y1 + 1)),
                    "vx": int(rng.choice([-2, -1, 1, 2])),
                    "vy": int(rng.choice([-2, -1, 1, 2])),
                    "xr": (x0, x1),
                    "yr": (y0, y1),
                }
            )

    def _advance(self):
        for b in self._blobs:
            for axis, vkey, rkey in (("x", "vx", "xr"), ("y", "vy", "yr")):
                lo, hi = b[rkey]
                pos = b[axis] + b[vkey]
                if pos < lo:
                    pos = lo + (lo - pos)
                    b[vkey] = -b[vkey]
                elif pos > hi:
                    pos = hi - (pos - hi)
                    b[vkey] = -b[vkey]
                b[axis] = min(hi, max(lo, pos))

    def _render(self, seq):
        if seq > 0:
            self._advance()
        frame = np.full((self.spec.height, self.spec.width), BG_LEVEL, dtype=np.uint8)
        level = BLOB_LEVELS[seq % 2]
        s = self.spec.size_px
        for b in self._blobs:
            frame[b["y"] : b["y"] + s, b["x"] : b["x"] + s] = level
        # frame-counter strip: bit i of seq at (0, 2i); isolated pixels only
        n = seq
        col = 0
        while n and col < self.spec.width:
            if n & 1:
                frame[0, col] = 255
            n >>= 1
            col += 2
        truth = {"blob_count": self.spec.count if seq > 0 else 0}
        return frame, truth


# ---------------------------------------------------------------------------
# Synthetic JPEG payloads
# ---------------------------------------------------------------------------

def make_synthetic_jpeg(width: int, height: int, *, entropy_bytes: int = 256, seed: int = 0) -> bytes:
    """Structurally valid grayscale JPEG: real markers, junk entropy data.

    Parses for format detection and dimension extraction; not decodable to
    meaningful pixels (the farm serves these on paths discovery probes).
    """
    soi = b"\xff\xd8"
    app0 = b"\xff\xe0\x00\x10JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00"
    sof0 = b"\xff\xc0" + struct.pack(">HBHHB", 11, 8, height, width, 1) + b"\x01\x11\x00"
    sos = b"\xff\xda" + struct.pack(">HB", 8, 1) + b"\x01\x00\x00\x3f\x00"
    entropy = _noise_without_ff(entropy_bytes, seed)
    eoi = b"\xff\xd9"
    return soi + app0 + sof0 + sos + entropy + eoi


def vary_jpeg(base: bytes, n: int) -> bytes:
    """Same JPEG structure, different bytes: swap the tail of the entropy data.

    Gives static-content discovery fixtures a changing payload hash, the
    way a real camera's recompressed frames differ between fetches.
    """
    tail = _noise_without_ff(16, n ^ 0x5EED)
    return base[: -2 - 16] + tail + base[-2:]


def _noise_without_ff(count: int, seed: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < count:
        block = hashlib.sha256(f"{seed}:{counter}".encode()).digest()
        out.extend(b % 0xFF for b in block)  # values 0..254 only
        counter += 1
    return bytes(out[:count])
