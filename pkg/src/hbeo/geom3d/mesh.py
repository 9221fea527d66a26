"""Triangle meshes and ASCII OFF ingestion.

Loaded meshes are normalized to fit the unit cube centered at the origin
(aspect ratio preserved, largest extent scaled to 1), which is the frame
every downstream stage assumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ioutil import atomic_write_text


class OffParseError(ValueError):
    """Malformed OFF input; message names the offending 1-based line."""


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (n, 3) float
    faces: np.ndarray     # (m, 3) int, indices into vertices

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if verts.shape[0] == 0:
            raise ValueError("mesh has no vertices")
        if not np.all(np.isfinite(verts)):
            raise ValueError("mesh vertices must be finite")
        if faces.size and (faces.min() < 0 or faces.max() >= verts.shape[0]):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def extents(self) -> np.ndarray:
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)


def normalize_to_unit_cube(vertices: np.ndarray) -> np.ndarray:
    """Center the bounding box at the origin and scale the largest extent to 1."""
    vmin = vertices.min(axis=0)
    vmax = vertices.max(axis=0)
    extent = float((vmax - vmin).max())
    if extent <= 0.0:
        raise ValueError("mesh has zero extent; cannot normalize")
    return (vertices - 0.5 * (vmin + vmax)) / extent


def _significant_lines(text: str):
    """Yield (1-based line number, stripped content) skipping blanks and comments."""
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield num, line


def load_off(data) -> TriangleMesh:
    """Parse ASCII OFF bytes/str into a normalized TriangleMesh.

    Polygon faces with more than 3 vertices are fan-triangulated. The common
    header quirk where the counts share the first line ("OFF8 6 0") is
    accepted; anything else that is not an "OFF" header is rejected.
    """
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="replace")
    lines = _significant_lines(data)

    try:
        header_num, header = next(lines)
    except StopIteration:
        raise OffParseError("line 1: empty OFF file") from None

    counts_tokens = None
    if header == "OFF":
        pass
    elif header.startswith("OFF"):
        rest = header[3:].split()
        if len(rest) == 3:
            counts_tokens = (header_num, rest)
        else:
            raise OffParseError(f"line {header_num}: malformed OFF header")
    else:
        raise OffParseError(f"line {header_num}: expected OFF header, got {header[:20]!r}")

    if counts_tokens is None:
        try:
            counts_tokens = next(lines)
            counts_tokens = (counts_tokens[0], counts_tokens[1].split())
        except StopIteration:
            raise OffParseError("unexpected end of file before counts") from None

    counts_num, tokens = counts_tokens
    try:
        n_vertices, n_faces, _ = (int(t) for t in tokens[:3])
    except (ValueError, IndexError):
        raise OffParseError(f"line {counts_num}: expected vertex/face/edge counts") from None
    if n_vertices == 0:
        raise OffParseError(f"line {counts_num}: zero vertices")

    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for i in range(n_vertices):
        try:
            num, line = next(lines)
        except StopIteration:
            raise OffParseError(f"unexpected end of file at vertex {i}") from None
        parts = line.split()
        if len(parts) < 3:
            raise OffParseError(f"line {num}: vertex needs 3 coordinates")
        try:
            vertices[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError:
            raise OffParseError(f"line {num}: non-numeric vertex coordinate") from None

    triangles = []
    for i in range(n_faces):
        try:
            num, line = next(lines)
        except StopIteration:
            raise OffParseError(f"unexpected end of file at face {i}") from None
        parts = line.split()
        try:
            arity = int(parts[0])
            idx = [int(t) for t in parts[1 : 1 + arity]]
        except (ValueError, IndexError):
            raise OffParseError(f"line {num}: malformed face record") from None
        if arity < 3 or len(idx) != arity:
            raise OffParseError(f"line {num}: face needs at least 3 indices")
        for j in idx:
            if j < 0 or j >= n_vertices:
                raise OffParseError(f"line {num}: vertex index {j} out of range")
        for j in range(1, arity - 1):  # fan triangulation
            triangles.append((idx[0], idx[j], idx[j + 1]))

    faces = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(normalize_to_unit_cube(vertices), faces)


def load_off_path(path) -> TriangleMesh:
    return load_off(Path(path).read_bytes())


def write_off(mesh: TriangleMesh, path) -> None:
    """Write a plain ASCII OFF file (triangles only)."""
    out = ["OFF", f"{mesh.vertices.shape[0]} {mesh.faces.shape[0]} 0"]
    out.extend(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices)
    out.extend(f"3 {f[0]} {f[1]} {f[2]}" for f in mesh.faces)
    atomic_write_text(path, "\n".join(out) + "\n")
