"""Completion quality metrics.

The naive score compares occupancy vectors directly and is brittle under
small misalignment; the distance-field score compares unsigned EDTs, which
spreads shape differences smoothly and barely reacts to one-voxel shifts.
"""

from __future__ import annotations

import numpy as np

from ..geom3d.edt import edt
from ..geom3d.voxel import VoxelGrid


def completion_score_naive(truth: VoxelGrid, estimate: VoxelGrid) -> float:
    """1 - ||o - o_hat||_2 / d where d is the total voxel count. Higher is better;
    1.0 exactly when the grids are identical."""
    if truth.resolution != estimate.resolution:
        raise ValueError("resolution mismatch")
    if not (truth.binary and estimate.binary):
        raise ValueError("both grids must be binary")
    diff = truth.values - estimate.values
    return 1.0 - float(np.linalg.norm(diff)) / truth.values.shape[0]


def completion_score_edt(truth: VoxelGrid, estimate: VoxelGrid) -> float:
    """||D - D_hat||_2 over the flattened distance fields. Lower is better;
    0.0 exactly when the fields agree."""
    if truth.resolution != estimate.resolution:
        raise ValueError("resolution mismatch")
    d_truth = edt(truth).distances
    d_est = edt(estimate).distances
    return float(np.linalg.norm(d_truth - d_est))
