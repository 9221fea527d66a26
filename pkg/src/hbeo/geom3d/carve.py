"""Carve a segmented depth image into known/unobserved voxel labels.

Given the alignment of the canonical voxel frame into the camera frame, each
voxel center projects to a pixel and is compared against the observed surface
depth along that ray: strictly in front of the surface means known-empty,
within half a voxel diagonal behind it means known-filled, deeper means
unobserved (occluded). Known-empty takes precedence in the band just in front
of the surface, matching center-inside occupancy semantics. Voxels projecting
to background pixels are known-empty (the segmented view saw free space
there); voxels projecting outside the image are unobserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .render import CameraIntrinsics, DepthImage
from .rotation import Rotation, rotation_matrix
from .voxel import voxel_centers

_NEAR_PLANE = 1e-6


@dataclass(frozen=True)
class PartialObservation:
    """Known voxels of a partially observed object.

    `known_indices` are strictly increasing flat voxel indices (z-major order);
    `known_values` are the matching occupancies in {0, 1}. Indices absent from
    `known_indices` are unobserved.
    """

    resolution: int
    known_indices: np.ndarray = field(repr=False)
    known_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.known_indices, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.known_values, dtype=np.float64).reshape(-1)
        d = self.resolution ** 3
        if idx.shape != vals.shape:
            raise ValueError("known_indices and known_values must have equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= d or np.any(np.diff(idx) <= 0):
                raise ValueError("known_indices must be strictly increasing and < r^3")
            if not np.all((vals == 0.0) | (vals == 1.0)):
                raise ValueError("known_values must be 0 or 1")
        object.__setattr__(self, "known_indices", idx)
        object.__setattr__(self, "known_values", vals)

    @property
    def num_known(self) -> int:
        return int(self.known_indices.size)

    @property
    def num_unobserved(self) -> int:
        return self.resolution ** 3 - self.num_known


def carve_partial_observation(
    depth: DepthImage,
    pose: Rotation,
    camera: CameraIntrinsics,
    resolution: int,
) -> PartialObservation:
    """Label voxels of the canonical grid from one segmented depth view.

    `pose` maps canonical voxel coordinates into the observed camera frame
    (for the search baseline it is the candidate rotation under test).
    """
    mask = depth.object_mask()
    if not mask.any():
        raise ValueError("depth image contains zero object pixels")
    if depth.width != camera.width or depth.height != camera.height:
        raise ValueError("depth image size does not match camera intrinsics")

    r = resolution
    tol = 0.5 * math.sqrt(3.0) / r
    world = voxel_centers(r) @ rotation_matrix(pose).T
    z = world[:, 2] + camera.camera_distance
    px = np.round(camera.cx + camera.focal_length * world[:, 0] / z).astype(np.int64)
    py = np.round(camera.cy - camera.focal_length * world[:, 1] / z).astype(np.int64)

    in_image = (z > _NEAR_PLANE) & (px >= 0) & (px < camera.width) & (py >= 0) & (py < camera.height)
    surf = np.zeros(r ** 3)
    surf[in_image] = depth.depth[py[in_image], px[in_image]]
    on_background = in_image & (surf == 0.0)
    on_object = in_image & (surf > 0.0)

    known_empty = on_background | (on_object & (z < surf))
    known_filled = on_object & (z >= surf) & (z <= surf + tol)

    indices = np.nonzero(known_empty | known_filled)[0]
    values = known_filled[indices].astype(np.float64)
    return PartialObservation(r, indices, values)
