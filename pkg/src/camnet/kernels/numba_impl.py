"""Numba-accelerated kernel implementations (default backend)."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .numpy_impl import MERCATOR_MAX_LAT


@njit(cache=True)
def _find_root(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _count_components(mask, min_px):
    h, w = mask.shape
    parent = np.full(h * w, -1, dtype=np.int64)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            idx = i * w + j
            parent[idx] = idx
            if j > 0 and mask[i, j - 1]:
                ra = _find_root(parent, idx)
                rb = _find_root(parent, idx - 1)
                if ra != rb:
                    parent[ra] = rb
            if i > 0 and mask[i - 1, j]:
                ra = _find_root(parent, idx)
                rb = _find_root(parent, idx - w)
                if ra != rb:
                    parent[ra] = rb
    sizes = np.zeros(h * w, dtype=np.int64)
    for idx in range(h * w):
        if parent[idx] >= 0:
            sizes[_find_root(parent, idx)] += 1
    count = 0
    for idx in range(h * w):
        if parent[idx] == idx and sizes[idx] >= min_px:
            count += 1
    return count


@njit(cache=True)
def _motion_feature_count(prev, curr, threshold, min_blob_px):
    h, w = prev.shape
    mask = np.empty((h, w), dtype=np.bool_)
    any_set = False
    for i in range(h):
        for j in range(w):
            d = np.int64(curr[i, j]) - np.int64(prev[i, j])
            if d < 0:
                d = -d
            hit = d > threshold
            mask[i, j] = hit
            any_set = any_set or hit
    if not any_set:
        return 0
    return _count_components(mask, min_blob_px)


@njit(cache=True)
def _change_fraction(prev, curr, threshold):
    h, w = prev.shape
    hits = 0
    for i in range(h):
        for j in range(w):
            d = np.int64(curr[i, j]) - np.int64(prev[i, j])
            if d < 0:
                d = -d
            if d > threshold:
                hits += 1
    return hits / (h * w)


@njit(cache=True)
def _mercator_cells(lat, lon, zoom):
    n = np.int64(1) << zoom
    out = np.empty(lat.size, dtype=np.int64)
    for i in range(lat.size):
        xf = (lon[i] + 180.0) / 360.0 * n
        la = lat[i]
        if la > MERCATOR_MAX_LAT:
            la = MERCATOR_MAX_LAT
        elif la < -MERCATOR_MAX_LAT:
            la = -MERCATOR_MAX_LAT
        phi = math.radians(la)
        yf = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * n
        xi = np.int64(math.floor(xf))
        yi = np.int64(math.floor(yf))
        if xi < 0:
            xi = 0
        elif xi > n - 1:
            xi = n - 1
        if yi < 0:
            yi = 0
        elif yi > n - 1:
            yi = n - 1
        out[i] = yi * n + xi
    return out


@njit(cache=True)
def _aggregate_cells(cells, lat, lon):
    m = cells.size
    order = np.argsort(cells, kind="mergesort")
    nunique = 0
    prev_cell = np.int64(-1)
    for k in range(m):
        c = cells[order[k]]
        if k == 0 or c != prev_cell:
            nunique += 1
        prev_cell = c
    unique = np.empty(nunique, dtype=np.int64)
    counts = np.zeros(nunique, dtype=np.int64)
    sum_lat = np.zeros(nunique, dtype=np.float64)
    sum_lon = np.zeros(nunique, dtype=np.float64)
    first_index = np.empty(nunique, dtype=np.int64)
    g = -1
    prev_cell = np.int64(-1)
    for k in range(m):
        idx = order[k]
        c = cells[idx]
        if k == 0 or c != prev_cell:
            g += 1
            unique[g] = c
            first_index[g] = idx
        counts[g] += 1
        sum_lat[g] += lat[idx]
        sum_lon[g] += lon[idx]
        if idx < first_index[g]:
            first_index[g] = idx
        prev_cell = c
    return unique, counts, sum_lat, sum_lon, first_index


def motion_feature_count(prev: np.ndarray, curr: np.ndarray, threshold: int, min_blob_px: int) -> int:
    return int(_motion_feature_count(prev, curr, np.int64(threshold), np.int64(min_blob_px)))


def change_fraction(prev: np.ndarray, curr: np.ndarray, threshold: int) -> float:
    return float(_change_fraction(prev, curr, np.int64(threshold)))


def mercator_cells(lat: np.ndarray, lon: np.ndarray, zoom: int) -> np.ndarray:
    return _mercator_cells(np.ascontiguousarray(lat), np.ascontiguousarray(lon), np.int64(zoom))


def aggregate_cells(cells: np.ndarray, lat: np.ndarray, lon: np.ndarray):
    return _aggregate_cells(
        np.ascontiguousarray(cells),
        np.ascontiguousarray(lat),
        np.ascontiguousarray(lon),
    )


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.ones((4, 4), dtype=np.uint8) * 200
    motion_feature_count(a, b, 25, 1)
    change_fraction(a, b, 25)
    lat = np.array([0.0, 10.0])
    lon = np.array([0.0, 20.0])
    aggregate_cells(mercator_cells(lat, lon, 3), lat, lon)
