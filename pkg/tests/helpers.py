"""Shared fixtures-in-code: procedural meshes and independent oracles."""

import math

import numpy as np

from hbeo.geom3d.mesh import TriangleMesh
from hbeo.geom3d.rotation import Rotation


def cube_mesh(half: float = 0.5) -> TriangleMesh:
    """Axis-aligned cube of full extent 2*half centered at the origin."""
    v = np.array(
        [[x, y, z] for z in (-half, half) for y in (-half, half) for x in (-half, half)],
        dtype=np.float64,
    )
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for q in quads:
        tris += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
    return TriangleMesh(v, np.asarray(tris))


def uv_sphere_mesh(radius: float = 0.5, stacks: int = 24, slices: int = 36) -> TriangleMesh:
    """Watertight UV-sphere tessellation."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, stacks):
        phi = np.pi * i / stacks
        for j in range(slices):
            th = 2 * np.pi * j / slices
            verts.append(
                (radius * np.sin(phi) * np.cos(th), radius * np.sin(phi) * np.sin(th), radius * np.cos(phi))
            )
    verts.append((0.0, 0.0, -radius))
    faces = []
    for j in range(slices):
        faces.append((0, 1 + j, 1 + (j + 1) % slices))
    for i in range(stacks - 2):
        base = 1 + i * slices
        nxt = base + slices
        for j in range(slices):
            a, b = base + j, base + (j + 1) % slices
            c, d = nxt + j, nxt + (j + 1) % slices
            faces += [(a, b, d), (a, d, c)]
    last = len(verts) - 1
    base = 1 + (stacks - 2) * slices
    for j in range(slices):
        faces.append((last, base + (j + 1) % slices, base + j))
    return TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


def square_mesh(z: float, half: float = 0.3) -> TriangleMesh:
    """Single quad facing the camera at world z."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return TriangleMesh(v, np.asarray([(0, 1, 2), (0, 2, 3)]))


def brute_force_edt(dense: np.ndarray) -> np.ndarray:
    """O(n^2) nearest-occupied distance over a dense [z, y, x] bool volume."""
    r = dense.shape[0]
    occ = np.argwhere(dense)
    zz, yy, xx = np.meshgrid(np.arange(r), np.arange(r), np.arange(r), indexing="ij")
    pts = np.column_stack([zz.ravel(), yy.ravel(), xx.ravel()])
    diff = pts[:, None, :] - occ[None, :, :]
    sq = (diff * diff).sum(axis=-1).min(axis=1)
    return np.sqrt(sq.astype(np.float64))


def quaternion(rot: Rotation) -> np.ndarray:
    theta = rot.angle
    if theta < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = rot.axis_angle / theta
    return np.concatenate([[math.cos(theta / 2)], math.sin(theta / 2) * axis])


def quaternion_geodesic(a: Rotation, b: Rotation) -> float:
    dot = float(quaternion(a) @ quaternion(b))
    return 2.0 * math.acos(min(1.0, abs(dot)))


def random_orthonormal(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(d, k)))
    return q


def bar_grid(r: int, x0: int, length: int, y: int, z: int):
    dense = np.zeros((r, r, r))
    dense[z, y, x0 : x0 + length] = 1.0
    return dense
