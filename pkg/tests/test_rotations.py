import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinmo.errors import DegenerateRotation
from kinmo.rotations import (axis_angle_matrix, identity_6d, matrix_to_rotation_6d,
                             rotation_6d_to_matrix, yaw_matrix)


def test_identity_round_trip():
    r6 = identity_6d((5,))
    mats = rotation_6d_to_matrix(r6)
    assert np.allclose(mats, np.eye(3))
    assert np.allclose(matrix_to_rotation_6d(mats), r6)


def test_round_trip_is_gram_schmidt_fixed_point():
    rng = np.random.default_rng(0)
    mats = axis_angle_matrix(rng.normal(size=3), rng.normal(size=(64,)))
    back = rotation_6d_to_matrix(matrix_to_rotation_6d(mats))
    assert np.abs(back - mats).max() < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_conversion_always_orthonormal_det_one(seed):
    rng = np.random.default_rng(seed)
    r6 = rng.normal(size=(4, 6))
    mats = rotation_6d_to_matrix(r6)
    eye = np.einsum("...ij,...ik->...jk", mats, mats)
    assert np.abs(eye - np.eye(3)).max() < 1e-8
    assert np.abs(np.linalg.det(mats) - 1.0).max() < 1e-8


def test_degenerate_collinear_columns_raise():
    bad = np.array([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])
    with pytest.raises(DegenerateRotation):
        rotation_6d_to_matrix(bad)
    with pytest.raises(DegenerateRotation):
        rotation_6d_to_matrix(np.zeros(6))


def test_yaw_matrix_quarter_turn():
    r = yaw_matrix(np.pi / 2)
    assert np.allclose(r @ np.array([1.0, 0, 0]), [0, 0, -1], atol=1e-12)
    assert np.allclose(r @ np.array([0, 1.0, 0]), [0, 1, 0], atol=1e-12)


def test_axis_angle_matches_yaw():
    theta = 0.7
    assert np.allclose(axis_angle_matrix((0, 1, 0), theta), yaw_matrix(theta))
