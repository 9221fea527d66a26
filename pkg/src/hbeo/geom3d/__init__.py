"""Geometry layer: meshes, voxel grids, depth rendering, observation carving,
rotations, and distance transforms."""

from .rotation import Rotation, canonicalize, from_axis_angle, geodesic_angle, identity, random_rotation, rotation_matrix
from .mesh import OffParseError, TriangleMesh, load_off, write_off
from .voxel import VoxelGrid, VoxelizeError, load_voxel_grid, rotate_grid, save_voxel_grid, voxel_centers, voxelize
from .render import CameraIntrinsics, DepthImage, EmptyRenderError, default_camera, load_depth_pgm, render_depth, save_depth_pgm
from .carve import PartialObservation, carve_partial_observation
from .edt import DistanceField, edt

__all__ = [
    "CameraIntrinsics",
    "DepthImage",
    "DistanceField",
    "EmptyRenderError",
    "OffParseError",
    "PartialObservation",
    "Rotation",
    "TriangleMesh",
    "VoxelGrid",
    "VoxelizeError",
    "canonicalize",
    "carve_partial_observation",
    "default_camera",
    "edt",
    "from_axis_angle",
    "geodesic_angle",
    "identity",
    "load_depth_pgm",
    "load_off",
    "load_voxel_grid",
    "random_rotation",
    "render_depth",
    "rotate_grid",
    "rotation_matrix",
    "save_depth_pgm",
    "save_voxel_grid",
    "voxel_centers",
    "voxelize",
    "write_off",
]
