import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbeo.geom3d.rotation import (
    Rotation,
    canonicalize,
    from_axis_angle,
    geodesic_angle,
    identity,
    random_rotation,
    rotation_matrix,
)
from helpers import quaternion_geodesic

finite_vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3)


def test_identity_angle_zero():
    assert identity().angle == 0.0
    assert geodesic_angle(identity(), identity()) == 0.0


def test_half_turn_is_maximal():
    half = from_axis_angle([0, 0, 1], math.pi)
    assert geodesic_angle(identity(), half) == pytest.approx(math.pi, abs=1e-12)


def test_canonicalize_wraps_over_pi():
    r = canonicalize(np.array([0, 0, 3 * math.pi / 2]))
    assert r.angle <= math.pi
    # 3pi/2 about +z equals pi/2 about -z
    assert np.allclose(r.axis_angle, [0, 0, -math.pi / 2])


def test_full_turn_is_identity_rotation():
    r = canonicalize(np.array([0, 1, 0]) * 2 * math.pi)
    assert r.angle == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(rotation_matrix(r), np.eye(3))


def test_matrix_is_orthogonal():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rotation_matrix(random_rotation(rng))
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)


def test_geodesic_matches_quaternion_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a = random_rotation(rng)
        b = random_rotation(rng)
        assert geodesic_angle(a, b) == pytest.approx(quaternion_geodesic(a, b), abs=1e-9)


@given(finite_vec, finite_vec)
@settings(max_examples=200, deadline=None)
def test_geodesic_symmetric_nonnegative(va, vb):
    a, b = canonicalize(np.array(va)), canonicalize(np.array(vb))
    d = geodesic_angle(a, b)
    assert 0.0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(geodesic_angle(b, a), abs=1e-12)


@given(finite_vec)
@settings(max_examples=200, deadline=None)
def test_geodesic_zero_iff_equal(v):
    r = canonicalize(np.array(v))
    assert geodesic_angle(r, r) == pytest.approx(0.0, abs=1e-6)


@given(finite_vec)
@settings(max_examples=200, deadline=None)
def test_sign_flip_with_angle_negation_is_same_rotation(v):
    r = canonicalize(np.array(v))
    flipped = canonicalize(-r.axis_angle * 1.0)
    # -theta about -axis is the same rotation
    assert geodesic_angle(r, Rotation(-(-r.axis_angle))) == pytest.approx(0.0, abs=1e-6)
    assert np.allclose(rotation_matrix(flipped), rotation_matrix(r.inverse()), atol=1e-12)


def test_from_axis_angle_rejects_zero_axis():
    with pytest.raises(ValueError):
        from_axis_angle([0, 0, 0], 1.0)


def test_random_rotation_respects_max_angle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        assert random_rotation(rng, 0.3).angle <= 0.3 + 1e-12
