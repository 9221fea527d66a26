"""Hybrid Bayesian eigenobject (HBEO) pipeline.

Learns a shared low-dimensional linear subspace of voxelized 3D solids,
provides the search-based eigenobject baseline (partial projection plus
class/pose density search), and a joint convolutional regressor that maps
one segmented depth image to class, 3-DOF pose, and subspace coefficients.
"""

__version__ = "0.1.0"
