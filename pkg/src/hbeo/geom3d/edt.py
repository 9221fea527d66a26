"""Exact unsigned Euclidean distance transform of binary voxel grids.

Separable lower-envelope (parabola) method: one 1-D squared-distance pass per
axis, each pass O(n) per line. Inputs and outputs of every pass are exact
integers in float64, so the result matches brute force bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .voxel import VoxelGrid


@dataclass(frozen=True)
class DistanceField:
    resolution: int
    distances: np.ndarray = field(repr=False)  # (r^3,), voxel units, z-major order

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64).reshape(-1)
        if d.shape[0] != self.resolution ** 3:
            raise ValueError("distance count does not match resolution")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("distances must be finite and non-negative")
        object.__setattr__(self, "distances", d)

    def as_dense(self) -> np.ndarray:
        r = self.resolution
        return self.distances.reshape(r, r, r)


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """1-D squared-distance transform: out[q] = min_p ((q - p)^2 + f[p])."""
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    z[0] = -np.inf
    z[1] = np.inf
    k = 0
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def _pass_axis(vol: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(vol, axis, -1)
    shape = moved.shape
    rows = moved.reshape(-1, shape[-1]).copy()
    for i in range(rows.shape[0]):
        rows[i] = _envelope_1d(rows[i])
    return np.moveaxis(rows.reshape(shape), -1, axis)


def edt(grid: VoxelGrid) -> DistanceField:
    """Distance from every voxel center to the nearest occupied voxel center."""
    if not grid.binary:
        raise ValueError("EDT requires a binary grid")
    dense = grid.as_dense()
    if not dense.any():
        raise ValueError("EDT undefined for an empty grid")
    r = grid.resolution
    big = 3.0 * r * r + 1.0  # larger than any attainable squared distance
    sq = np.where(dense > 0, 0.0, big)
    for axis in range(3):
        sq = _pass_axis(sq, axis)
    return DistanceField(r, np.sqrt(sq).reshape(-1))
