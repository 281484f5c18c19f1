"""Pure-numpy kernel implementations (fallback backend).

Connected-component labeling uses iterative minimum-label propagation,
which converges in O(component diameter) sweeps; the numba backend does
the same job in a single union-find pass.
"""

from __future__ import annotations

import numpy as np

# Web-Mercator latitude limit; points beyond it land in the edge rows so
# cluster counts still conserve.
MERCATOR_MAX_LAT = 85.05112878


def motion_feature_count(prev: np.ndarray, curr: np.ndarray, threshold: int, min_blob_px: int) -> int:
    """Count 4-connected regions of super-threshold change with area >= min_blob_px."""
    diff = np.abs(curr.astype(np.int16) - prev.astype(np.int16))
    mask = diff > threshold
    if not mask.any():
        return 0
    return _count_components(mask, min_blob_px)


def change_fraction(prev: np.ndarray, curr: np.ndarray, threshold: int) -> float:
    """Fraction of pixels whose absolute difference exceeds threshold."""
    diff = np.abs(curr.astype(np.int16) - prev.astype(np.int16))
    return float(np.count_nonzero(diff > threshold)) / diff.size


def _count_components(mask: np.ndarray, min_px: int) -> int:
    h, w = mask.shape
    big = np.int64(h * w)
    labels = np.where(mask, np.arange(h * w, dtype=np.int64).reshape(h, w), big)
    while True:
        new = labels.copy()
        np.minimum(new[1:, :], labels[:-1, :], out=new[1:, :])
        np.minimum(new[:-1, :], labels[1:, :], out=new[:-1, :])
        np.minimum(new[:, 1:], labels[:, :-1], out=new[:, 1:])
        np.minimum(new[:, :-1], labels[:, 1:], out=new[:, :-1])
        new[~mask] = big
        if np.array_equal(new, labels):
            break
        labels = new
    _, sizes = np.unique(labels[mask], return_counts=True)
    return int(np.count_nonzero(sizes >= min_px))


def mercator_cells(lat: np.ndarray, lon: np.ndarray, zoom: int) -> np.ndarray:
    """Web-Mercator grid cell index (y * 2^zoom + x) for each point."""
    n = 1 << zoom
    xf = (lon + 180.0) / 360.0 * n
    phi = np.radians(np.clip(lat, -MERCATOR_MAX_LAT, MERCATOR_MAX_LAT))
    yf = (1.0 - np.log(np.tan(phi) + 1.0 / np.cos(phi)) / np.pi) / 2.0 * n
    xi = np.clip(np.floor(xf).astype(np.int64), 0, n - 1)
    yi = np.clip(np.floor(yf).astype(np.int64), 0, n - 1)
    return yi * n + xi


def aggregate_cells(cells: np.ndarray, lat: np.ndarray, lon: np.ndarray):
    """Group points by cell id.

    Returns (unique_cells, counts, sum_lat, sum_lon, first_index) where
    first_index is each cell's earliest position in the input arrays.
    """
    order = np.argsort(cells, kind="stable")
    sorted_cells = cells[order]
    starts = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    unique = sorted_cells[starts]
    counts = np.diff(np.r_[starts, sorted_cells.size])
    sum_lat = np.add.reduceat(lat[order], starts)
    sum_lon = np.add.reduceat(lon[order], starts)
    first_index = order[starts]
    return unique, counts, sum_lat, sum_lon, first_index


def warmup() -> None:
    """No-op; numpy needs no compilation pass."""
