"""Procedural desk-scale object classes.

Three shape families with seeded parameter jitter: open boxes with a partial
lid, triaxial ellipsoids, and L-brackets. Boxes and brackets are unions of
closed cuboids that touch but never overlap, so scanline-parity voxelization
stays exact; ellipsoids are watertight UV-sphere tessellations.

The box lid sits over the rear of the opening and the bracket cross-section
is chiral, so neither class has a half-turn self-symmetry. Ellipsoids do
(every principal half-turn maps them to themselves), which is why dataset
pose sampling stays inside a 75-degree ball: the symmetric counterpart of any
sampled pose then falls outside the sampled range and pose targets remain
unambiguous.
"""

from __future__ import annotations

import numpy as np

from ..geom3d.mesh import TriangleMesh, normalize_to_unit_cube

DESK_CLASS_IDS = ("lidded_box", "ellipsoid", "l_bracket")


def _cuboid(lo, hi):
    """Closed axis-aligned cuboid as (vertices, faces) with outward winding."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    verts = np.array(
        [
            [x0, y0, z0], [x1, y0, z0], [x0, y1, z0], [x1, y1, z0],
            [x0, y0, z1], [x1, y0, z1], [x0, y1, z1], [x1, y1, z1],
        ]
    )
    quads = [
        (0, 2, 3, 1),  # z = z0
        (4, 5, 7, 6),  # z = z1
        (0, 1, 5, 4),  # y = y0
        (2, 6, 7, 3),  # y = y1
        (0, 4, 6, 2),  # x = x0
        (1, 3, 7, 5),  # x = x1
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return verts, faces


def _combine(parts) -> TriangleMesh:
    verts = []
    faces = []
    offset = 0
    for v, f in parts:
        verts.append(v)
        faces.extend((a + offset, b + offset, c + offset) for a, b, c in f)
        offset += len(v)
    vertices = np.vstack(verts)
    return TriangleMesh(normalize_to_unit_cube(vertices), np.asarray(faces, dtype=np.int64))


def lidded_box(rng: np.random.Generator) -> TriangleMesh:
    """Open rectangular box (cavity from the top) with a flat lid over the rear."""
    wx = rng.uniform(0.62, 0.95)   # full outer extents
    wy = rng.uniform(0.62, 0.95)
    hz = rng.uniform(0.45, 0.75)
    wall = rng.uniform(0.10, 0.16) * min(wx, wy)
    lid_t = rng.uniform(0.08, 0.14) * hz
    cover = rng.uniform(0.45, 0.65)  # fraction of the footprint the lid covers (rear)

    x0, x1 = -wx / 2, wx / 2
    y0, y1 = -wy / 2, wy / 2
    z0, z1 = -hz / 2, hz / 2
    parts = [
        _cuboid((x0, y0, z0), (x1, y1, z0 + wall)),                     # bottom
        _cuboid((x0, y0, z0 + wall), (x0 + wall, y1, z1)),              # left wall
        _cuboid((x1 - wall, y0, z0 + wall), (x1, y1, z1)),              # right wall
        _cuboid((x0 + wall, y0, z0 + wall), (x1 - wall, y0 + wall, z1)),  # front wall
        _cuboid((x0 + wall, y1 - wall, z0 + wall), (x1 - wall, y1, z1)),  # back wall
        _cuboid((x0, y1 - cover * wy, z1), (x1, y1, z1 + lid_t)),       # rear lid on top
    ]
    return _combine(parts)


def ellipsoid(rng: np.random.Generator, stacks: int = 14, slices: int = 20) -> TriangleMesh:
    """Triaxial ellipsoid with distinct, jittered semi-axes."""
    semi = np.array(
        [rng.uniform(0.44, 0.50), rng.uniform(0.28, 0.36), rng.uniform(0.16, 0.24)]
    )
    verts = [(0.0, 0.0, semi[2])]
    for i in range(1, stacks):
        phi = np.pi * i / stacks
        sin_p, cos_p = np.sin(phi), np.cos(phi)
        for j in range(slices):
            th = 2.0 * np.pi * j / slices
            verts.append((semi[0] * sin_p * np.cos(th), semi[1] * sin_p * np.sin(th), semi[2] * cos_p))
    verts.append((0.0, 0.0, -semi[2]))

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
    return TriangleMesh(normalize_to_unit_cube(np.asarray(verts)), np.asarray(faces, dtype=np.int64))


def l_bracket(rng: np.random.Generator) -> TriangleMesh:
    """L-shaped prism: vertical leg plus a foot, touching along one plane."""
    width = rng.uniform(0.45, 0.8)    # extrusion along x
    depth = rng.uniform(0.6, 1.0)     # along y
    height = rng.uniform(0.6, 1.0)    # along z
    leg_t = rng.uniform(0.2, 0.32) * depth
    foot_t = rng.uniform(0.2, 0.32) * height

    x0, x1 = -width / 2, width / 2
    parts = [
        _cuboid((x0, 0.0, 0.0), (x1, leg_t, height)),      # vertical leg at the back
        _cuboid((x0, leg_t, 0.0), (x1, depth, foot_t)),    # foot running forward
    ]
    return _combine(parts)


_BUILDERS = {"lidded_box": lidded_box, "ellipsoid": ellipsoid, "l_bracket": l_bracket}


def make_class_mesh(class_id: str, rng: np.random.Generator) -> TriangleMesh:
    try:
        return _BUILDERS[class_id](rng)
    except KeyError:
        raise ValueError(f"unknown procedural class {class_id!r}") from None
