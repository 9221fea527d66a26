"""Axis-angle rotations and SO(3) utilities.

The axis-angle vector points along the rotation axis and its norm is the
angle in radians. Canonical form keeps the angle in [0, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_ZERO_ANGLE = 1e-15


@dataclass(frozen=True)
class Rotation:
    axis_angle: np.ndarray

    def __post_init__(self):
        vec = np.array(self.axis_angle, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(vec)):
            raise ValueError("axis_angle must be a finite 3-vector")
        vec.setflags(write=False)
        object.__setattr__(self, "axis_angle", vec)

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.axis_angle))

    def is_canonical(self, tol: float = 1e-12) -> bool:
        return self.angle <= math.pi + tol

    def inverse(self) -> "Rotation":
        return Rotation(-self.axis_angle)

    def matrix(self) -> np.ndarray:
        return rotation_matrix(self)


def identity() -> Rotation:
    return Rotation(np.zeros(3))


def from_axis_angle(axis, angle: float) -> Rotation:
    """Rotation by `angle` radians about `axis` (any non-zero vector), canonicalized."""
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(axis))
    if norm == 0.0:
        raise ValueError("rotation axis must be non-zero")
    return canonicalize(axis / norm * float(angle))


def canonicalize(vec) -> Rotation:
    """Wrap an arbitrary axis-angle vector so the encoded angle lies in [0, pi]."""
    vec = np.array(vec, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(vec))
    if angle <= math.pi:
        return Rotation(vec)
    axis = vec / angle
    angle = math.fmod(angle, 2.0 * math.pi)
    if angle > math.pi:
        angle -= 2.0 * math.pi  # in (-pi, 0): flips the axis below
    return Rotation(axis * angle)


def rotation_matrix(rot: Rotation) -> np.ndarray:
    """3x3 rotation matrix via Rodrigues' formula."""
    v = rot.axis_angle
    theta = float(np.linalg.norm(v))
    if theta < _ZERO_ANGLE:
        return np.eye(3)
    kx, ky, kz = v / theta
    skew = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(theta) * skew + (1.0 - math.cos(theta)) * (skew @ skew)


def apply_rotation(rot: Rotation, points: np.ndarray) -> np.ndarray:
    """Rotate row-vector points (n, 3)."""
    return np.asarray(points, dtype=np.float64) @ rotation_matrix(rot).T


def geodesic_angle(a: Rotation, b: Rotation) -> float:
    """Angle of the relative rotation a^-1 b, in [0, pi]."""
    rel = rotation_matrix(a).T @ rotation_matrix(b)
    cos_theta = 0.5 * (float(np.trace(rel)) - 1.0)
    return math.acos(min(1.0, max(-1.0, cos_theta)))


def random_rotation(rng: np.random.Generator, max_angle: float = math.pi) -> Rotation:
    """Uniform random axis on the sphere, angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    norm = float(np.linalg.norm(axis))
    while norm < 1e-12:
        axis = rng.normal(size=3)
        norm = float(np.linalg.norm(axis))
    return canonicalize(axis / norm * rng.uniform(0.0, max_angle))
