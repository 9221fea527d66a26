"""Voxel occupancy grids: rasterization of meshes, resampling, and binary IO.

Grids are cubes of `r` voxels per axis spanning [-0.5, 0.5]^3, matching the
unit-cube mesh frame. Flattening order is fixed and documented everywhere a
vector leaves this module: flat index = z*r^2 + y*r + x.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ioutil import atomic_write
from .mesh import TriangleMesh
from .rotation import Rotation, rotation_matrix

_HBVX_MAGIC = b"HBVX"
_HBVX_VERSION = 1

# Tiny ray offsets dodge exact edge/vertex hits cast against meshes whose
# vertices sit on rational coordinates (all procedural solids do).
_RAY_EPS_Y = 0.9431e-9
_RAY_EPS_Z = 1.7513e-9


class VoxelizeError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy volume. Binary grids hold {0, 1}; non-binary grids hold real
    occupancy values (reconstructions may slightly leave [0, 1])."""

    resolution: int
    values: np.ndarray = field(repr=False)
    binary: bool = True

    def __post_init__(self):
        r = int(self.resolution)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if r < 1:
            raise ValueError("resolution must be >= 1")
        if vals.shape[0] != r ** 3:
            raise ValueError(f"expected {r ** 3} values, got {vals.shape[0]}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("voxel values must be finite")
        if self.binary and not np.all((vals == 0.0) | (vals == 1.0)):
            raise ValueError("binary grid values must be 0 or 1")
        object.__setattr__(self, "resolution", r)
        object.__setattr__(self, "values", vals)

    def as_dense(self) -> np.ndarray:
        """(r, r, r) array indexed [z, y, x]."""
        r = self.resolution
        return self.values.reshape(r, r, r)

    @classmethod
    def from_dense(cls, dense: np.ndarray, binary: bool = True) -> "VoxelGrid":
        dense = np.asarray(dense, dtype=np.float64)
        return cls(dense.shape[0], dense.reshape(-1), binary=binary)

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.values > 0.5)) if not self.binary else int(self.values.sum())

    def is_empty(self) -> bool:
        return not bool(np.any(self.values > 0.5))


def voxel_centers(resolution: int) -> np.ndarray:
    """(r^3, 3) voxel center coordinates (x, y, z) in flattening order."""
    axis = (np.arange(resolution) + 0.5) / resolution - 0.5
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def _ray_crossings(mesh: TriangleMesh, resolution: int):
    """All (ray_id, x) crossings of +x rays through the perturbed voxel-center
    lattice, where ray_id = z*r + y."""
    r = resolution
    axis = (np.arange(r) + 0.5) / r - 0.5
    gy = axis + _RAY_EPS_Y
    gz = axis + _RAY_EPS_Z

    tri = mesh.vertices[mesh.faces]  # (m, 3, 3)
    ray_ids = []
    xs = []
    for a, b, c in tri:
        area2 = (b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1])
        if abs(area2) < 1e-14:  # triangle parallel to the ray direction
            continue
        y0 = int(np.searchsorted(gy, min(a[1], b[1], c[1]), side="left"))
        y1 = int(np.searchsorted(gy, max(a[1], b[1], c[1]), side="right"))
        z0 = int(np.searchsorted(gz, min(a[2], b[2], c[2]), side="left"))
        z1 = int(np.searchsorted(gz, max(a[2], b[2], c[2]), side="right"))
        if y0 >= y1 or z0 >= z1:
            continue
        py = gy[y0:y1][None, :]
        pz = gz[z0:z1][:, None]
        # Signed barycentric numerators against edges (b,c), (c,a), (a,b).
        w0 = (c[1] - b[1]) * (pz - b[2]) - (c[2] - b[2]) * (py - b[1])
        w1 = (a[1] - c[1]) * (pz - c[2]) - (a[2] - c[2]) * (py - c[1])
        w2 = (b[1] - a[1]) * (pz - a[2]) - (b[2] - a[2]) * (py - a[1])
        if area2 > 0:
            inside = (w0 > 0) & (w1 > 0) & (w2 > 0)
        else:
            inside = (w0 < 0) & (w1 < 0) & (w2 < 0)
        if not inside.any():
            continue
        lam0 = w0[inside] / area2
        lam1 = w1[inside] / area2
        lam2 = w2[inside] / area2
        x_hit = lam0 * a[0] + lam1 * b[0] + lam2 * c[0]
        iz, iy = np.nonzero(inside)
        ray_ids.append((iz + z0) * r + (iy + y0))
        xs.append(x_hit)
    if not ray_ids:
        return np.empty(0, dtype=np.int64), np.empty(0)
    return np.concatenate(ray_ids), np.concatenate(xs)


def _parity_fill(mesh: TriangleMesh, resolution: int) -> np.ndarray:
    """Dense bool [z, y, x]: voxel centers inside the solid by +x ray parity."""
    r = resolution
    centers_x = (np.arange(r) + 0.5) / r - 0.5
    occ = np.zeros((r, r, r), dtype=bool)
    ray_ids, xs = _ray_crossings(mesh, r)
    if ray_ids.size == 0:
        return occ
    order = np.lexsort((xs, ray_ids))
    ray_ids = ray_ids[order]
    xs = xs[order]
    starts = np.searchsorted(ray_ids, np.arange(r * r), side="left")
    ends = np.searchsorted(ray_ids, np.arange(r * r), side="right")
    for ray in np.unique(ray_ids):
        lo, hi = starts[ray], ends[ray]
        row_xs = xs[lo:hi]
        parity = np.searchsorted(row_xs, centers_x, side="left") % 2 == 1
        occ[ray // r, ray % r, :] = parity
    return occ


def point_triangle_sqdist(points: np.ndarray, a, b, c) -> np.ndarray:
    """Squared distance from each point (n, 3) to triangle (a, b, c)."""
    p = np.asarray(points, dtype=np.float64)
    ab = b - a
    ac = c - a
    bc = c - b
    best = np.full(p.shape[0], np.inf)

    for origin, edge in ((a, ab), (a, ac), (b, bc)):
        rel = p - origin
        denom = float(edge @ edge)
        if denom <= 0.0:
            d2 = (rel * rel).sum(axis=1)
        else:
            t = np.clip(rel @ edge / denom, 0.0, 1.0)
            diff = rel - t[:, None] * edge
            d2 = (diff * diff).sum(axis=1)
        np.minimum(best, d2, out=best)

    n = np.cross(ab, ac)
    nn = float(n @ n)
    if nn > 0.0:
        ap = p - a
        dist_n = ap @ n / math.sqrt(nn)
        proj = p - dist_n[:, None] * (n / math.sqrt(nn))
        # Barycentric test of the projected point.
        v0 = proj - a
        d00 = float(ab @ ab)
        d01 = float(ab @ ac)
        d11 = float(ac @ ac)
        d20 = v0 @ ab
        d21 = v0 @ ac
        denom = d00 * d11 - d01 * d01
        if denom > 0.0:
            v = (d11 * d20 - d01 * d21) / denom
            w = (d00 * d21 - d01 * d20) / denom
            inside = (v >= 0.0) & (w >= 0.0) & (v + w <= 1.0)
            face_d2 = dist_n * dist_n
            best = np.where(inside, np.minimum(best, face_d2), best)
    return best


def _surface_fill(mesh: TriangleMesh, resolution: int) -> np.ndarray:
    """Dense bool [z, y, x]: voxel centers within half a voxel diagonal of the surface."""
    r = resolution
    h = 1.0 / r
    tol = 0.5 * math.sqrt(3.0) * h
    axis = (np.arange(r) + 0.5) * h - 0.5
    occ = np.zeros((r, r, r), dtype=bool)
    tri = mesh.vertices[mesh.faces]
    for a, b, c in tri:
        lo = np.minimum(np.minimum(a, b), c) - tol
        hi = np.maximum(np.maximum(a, b), c) + tol
        i0 = np.maximum(np.searchsorted(axis, lo, side="left"), 0)
        i1 = np.minimum(np.searchsorted(axis, hi, side="right"), r)
        if np.any(i0 >= i1):
            continue
        xs = axis[i0[0]:i1[0]]
        ys = axis[i0[1]:i1[1]]
        zs = axis[i0[2]:i1[2]]
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        near = point_triangle_sqdist(pts, a, b, c) <= tol * tol
        block = near.reshape(len(zs), len(ys), len(xs))
        occ[i0[2]:i1[2], i0[1]:i1[1], i0[0]:i1[0]] |= block
    return occ


def voxelize(mesh: TriangleMesh, resolution: int) -> VoxelGrid:
    """Rasterize a normalized mesh into a binary occupancy grid.

    A voxel is occupied iff its center is inside the watertight solid by
    scanline parity along +x rays. Meshes that enclose no volume (open
    surfaces, sheets) fall back to surface rasterization: centers within half
    a voxel diagonal of any triangle become occupied, so such inputs still
    produce a usable grid.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if mesh.faces.shape[0] == 0:
        raise VoxelizeError("mesh has no faces")
    occ = _parity_fill(mesh, resolution)
    if not occ.any():
        occ = _surface_fill(mesh, resolution)
    if not occ.any():
        raise VoxelizeError("mesh produced zero occupied voxels")
    return VoxelGrid.from_dense(occ.astype(np.float64), binary=True)


def rotate_grid(grid: VoxelGrid, rot: Rotation) -> VoxelGrid:
    """Resample a binary grid under a rotation about the grid center.

    Inverse mapping with nearest-neighbor lookup: each destination center is
    rotated back into the source frame; out-of-bounds samples are empty.
    """
    if not grid.binary:
        raise ValueError("rotate_grid expects a binary grid")
    r = grid.resolution
    mat = rotation_matrix(rot)
    src = voxel_centers(r) @ mat  # row-vector form of R^-1 applied to centers
    idx = np.floor((src + 0.5) * r).astype(np.int64)
    in_bounds = np.all((idx >= 0) & (idx < r), axis=1)
    dense = grid.as_dense()
    out = np.zeros(r ** 3, dtype=np.float64)
    sel = np.nonzero(in_bounds)[0]
    out[sel] = dense[idx[sel, 2], idx[sel, 1], idx[sel, 0]]
    return VoxelGrid(r, out, binary=True)


def save_voxel_grid(grid: VoxelGrid, path) -> None:
    """HBVX container: magic, version u8, binary-flag u8, resolution u32 LE,
    then r^3 bytes (binary) or r^3 little-endian float32 values."""
    header = _HBVX_MAGIC + struct.pack("<BBI", _HBVX_VERSION, 1 if grid.binary else 0, grid.resolution)
    if grid.binary:
        payload = grid.values.astype(np.uint8).tobytes()
    else:
        payload = grid.values.astype("<f4").tobytes()
    atomic_write(path, header + payload)


def load_voxel_grid(path) -> VoxelGrid:
    blob = Path(path).read_bytes()
    if blob[:4] != _HBVX_MAGIC:
        raise ValueError("not an HBVX file (bad magic)")
    if len(blob) < 10:
        raise ValueError("truncated HBVX header")
    version, flag, resolution = struct.unpack("<BBI", blob[4:10])
    if version != _HBVX_VERSION:
        raise ValueError(f"unsupported HBVX version {version}")
    count = resolution ** 3
    body = blob[10:]
    if flag == 1:
        if len(body) != count:
            raise ValueError("HBVX payload length mismatch")
        values = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
        return VoxelGrid(resolution, values, binary=True)
    if len(body) != 4 * count:
        raise ValueError("HBVX payload length mismatch")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return VoxelGrid(resolution, values, binary=False)


def grid_surface_mesh(grid: VoxelGrid):
    """Quad faces on occupied/empty voxel boundaries, for PLY export.

    Returns (vertices (n, 3) in grid coordinates scaled to [-0.5, 0.5],
    faces: list of 4-index tuples).
    """
    r = grid.resolution
    dense = grid.as_dense() > 0.5
    vert_index: dict[tuple, int] = {}
    vertices: list[tuple] = []
    faces: list[tuple] = []

    def vid(ix, iy, iz):
        key = (ix, iy, iz)
        if key not in vert_index:
            vert_index[key] = len(vertices)
            vertices.append((ix / r - 0.5, iy / r - 0.5, iz / r - 0.5))
        return vert_index[key]

    # For each occupied voxel, emit faces toward empty neighbors.
    occ = np.argwhere(dense)  # rows (z, y, x)
    for z, y, x in occ:
        for dx, dy, dz, corners in _FACE_TABLE:
            nx, ny, nz = x + dx, y + dy, z + dz
            if 0 <= nx < r and 0 <= ny < r and 0 <= nz < r and dense[nz, ny, nx]:
                continue
            quad = tuple(vid(x + cx, y + cy, z + cz) for cx, cy, cz in corners)
            faces.append(quad)
    return np.asarray(vertices, dtype=np.float64), faces


# Unit-cube corner offsets for the 6 face directions, wound outward.
_FACE_TABLE = (
    (-1, 0, 0, ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0))),
    (1, 0, 0, ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1))),
    (0, -1, 0, ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1))),
    (0, 1, 0, ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0))),
    (0, 0, -1, ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0))),
    (0, 0, 1, ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))),
)


def save_ply(path, vertices: np.ndarray, faces) -> None:
    """ASCII PLY with polygonal faces."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines.extend(f"{v[0]:.6g} {v[1]:.6g} {v[2]:.6g}" for v in vertices)
    lines.extend(f"{len(f)} " + " ".join(str(i) for i in f) for f in faces)
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))
