"""Software z-buffer depth rendering under a pinhole camera.

The camera sits at (0, 0, -camera_distance) looking at the origin along +z.
Depth is the distance along the view axis; background pixels carry the
sentinel value 0, all object pixels carry positive depth.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ioutil import atomic_write, atomic_write_text
from .mesh import TriangleMesh
from .rotation import Rotation, rotation_matrix

_NEAR_PLANE = 1e-6
_PGM_MAXVAL = 65535


class EmptyRenderError(RuntimeError):
    """The object projected to zero pixels."""


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    focal_length: float
    camera_distance: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.focal_length <= 0 or self.camera_distance <= 0:
            raise ValueError("focal length and camera distance must be positive")

    @property
    def cx(self) -> float:
        return 0.5 * (self.width - 1)

    @property
    def cy(self) -> float:
        return 0.5 * (self.height - 1)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "focal_length": self.focal_length,
            "camera_distance": self.camera_distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(int(d["width"]), int(d["height"]), float(d["focal_length"]), float(d["camera_distance"]))


def default_camera(width: int, height: int, distance: float = 2.0) -> CameraIntrinsics:
    # Unit-cube object at `distance` subtends ~80% of the image height.
    return CameraIntrinsics(width, height, focal_length=0.8 * height * distance, camera_distance=distance)


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray = field(repr=False)  # (height, width), 0 = background

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depths must be finite and non-negative")
        object.__setattr__(self, "depth", d)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def object_mask(self) -> np.ndarray:
        return self.depth > 0


def _project(points: np.ndarray, camera: CameraIntrinsics):
    """Camera-axis depth and pixel coordinates of world points."""
    z = points[:, 2] + camera.camera_distance
    u = camera.cx + camera.focal_length * points[:, 0] / z
    v = camera.cy - camera.focal_length * points[:, 1] / z
    return z, u, v


def render_depth(mesh: TriangleMesh, pose: Rotation, camera: CameraIntrinsics) -> DepthImage:
    """Rasterize the rotated mesh with perspective-correct depth interpolation."""
    verts = mesh.vertices @ rotation_matrix(pose).T
    z, u, v = _project(verts, camera)
    inv_z = 1.0 / z

    w, h = camera.width, camera.height
    zbuf = np.full((h, w), np.inf)

    for face in mesh.faces:
        if np.any(z[face] <= _NEAR_PLANE):
            continue
        fu, fv, fi = u[face], v[face], inv_z[face]
        area2 = (fu[1] - fu[0]) * (fv[2] - fv[0]) - (fv[1] - fv[0]) * (fu[2] - fu[0])
        if abs(area2) < 1e-12:
            continue
        x0 = max(0, int(math.ceil(fu.min())))
        x1 = min(w - 1, int(math.floor(fu.max())))
        y0 = max(0, int(math.ceil(fv.min())))
        y1 = min(h - 1, int(math.floor(fv.max())))
        if x0 > x1 or y0 > y1:
            continue
        px = np.arange(x0, x1 + 1)[None, :]
        py = np.arange(y0, y1 + 1)[:, None]
        w0 = (fu[2] - fu[1]) * (py - fv[1]) - (fv[2] - fv[1]) * (px - fu[1])
        w1 = (fu[0] - fu[2]) * (py - fv[2]) - (fv[0] - fv[2]) * (px - fu[2])
        w2 = (fu[1] - fu[0]) * (py - fv[0]) - (fv[1] - fv[0]) * (px - fu[0])
        lam0 = w0 / area2
        lam1 = w1 / area2
        lam2 = w2 / area2
        inside = (lam0 >= -1e-12) & (lam1 >= -1e-12) & (lam2 >= -1e-12)
        if not inside.any():
            continue
        depth = 1.0 / (lam0 * fi[0] + lam1 * fi[1] + lam2 * fi[2])
        tile = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        np.copyto(tile, depth, where=inside & (depth < tile))

    mask = np.isfinite(zbuf)
    if not mask.any():
        raise EmptyRenderError("object projected to zero pixels")
    out = np.where(mask, zbuf, 0.0)
    return DepthImage(out)


def save_depth_pgm(img: DepthImage, path) -> None:
    """16-bit binary PGM (P5, big-endian sample bytes per the Netpbm format),
    quantized over the object depth range; the range goes to a sidecar text
    header `<path>.hdr`. Background keeps the sentinel 0."""
    path = Path(path)
    mask = img.object_mask()
    if mask.any():
        dmin = float(img.depth[mask].min())
        dmax = float(img.depth[mask].max())
    else:
        dmin, dmax = 0.0, 1.0
    span = dmax - dmin
    q = np.zeros(img.depth.shape, dtype=np.uint16)
    if span > 0:
        q[mask] = 1 + np.round((img.depth[mask] - dmin) / span * (_PGM_MAXVAL - 1)).astype(np.uint16)
    else:
        q[mask] = 1
    header = f"P5\n{img.width} {img.height}\n{_PGM_MAXVAL}\n".encode("ascii")
    atomic_write(path, header + q.astype(">u2").tobytes())
    atomic_write_text(str(path) + ".hdr", f"depth_min {dmin!r}\ndepth_max {dmax!r}\n")


def quantization_step(dmin: float, dmax: float) -> float:
    return (dmax - dmin) / (_PGM_MAXVAL - 1) if dmax > dmin else 0.0


def load_depth_pgm(path) -> DepthImage:
    path = Path(path)
    blob = path.read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != _PGM_MAXVAL:
        raise ValueError(f"expected 16-bit PGM (maxval {_PGM_MAXVAL}), got {maxval}")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(blob, dtype=">u2", count=width * height, offset=pos).reshape(height, width)

    dmin = dmax = None
    for line in Path(str(path) + ".hdr").read_text().splitlines():
        key, _, value = line.partition(" ")
        if key == "depth_min":
            dmin = float(value)
        elif key == "depth_max":
            dmax = float(value)
    if dmin is None or dmax is None:
        raise ValueError("sidecar header missing depth range")

    depth = np.zeros((height, width), dtype=np.float64)
    mask = data > 0
    span = dmax - dmin
    depth[mask] = dmin + (data[mask].astype(np.float64) - 1) / (_PGM_MAXVAL - 1) * span
    return DepthImage(depth)
