"""Continuous 6D rotation parameterization and yaw helpers.

A 6D rotation is the first two columns of a rotation matrix, flattened as
(b1x, b1y, b1z, b2x, b2y, b2z). Conversion back to a matrix runs Gram-Schmidt
on the two columns and completes the frame with a cross product, so the result
always has orthonormal columns and determinant +1.
"""

import numpy as np
import torch

from .errors import DegenerateRotation

_EPS = 1e-8


def rotation_6d_to_matrix(r6):
    """(..., 6) -> (..., 3, 3). Raises DegenerateRotation on collinear columns."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < _EPS):
        raise DegenerateRotation("first 6D column has (near-)zero norm")
    b1 = a1 / n1
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2p, axis=-1, keepdims=True)
    if np.any(n2 < _EPS):
        raise DegenerateRotation("6D columns are (near-)collinear")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rotation_6d(mat):
    """(..., 3, 3) -> (..., 6): first two columns, concatenated."""
    mat = np.asarray(mat, dtype=np.float64)
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def identity_6d(shape=()):
    """6D form of the identity rotation, broadcast to `shape + (6,)`."""
    r6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    return np.broadcast_to(r6, tuple(shape) + (6,)).copy()


def yaw_matrix(theta):
    """Rotation about +y. theta (...,) -> (..., 3, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(c), np.ones_like(c)
    rows = [
        np.stack([c, z, s], axis=-1),
        np.stack([z, o, z], axis=-1),
        np.stack([-s, z, c], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def yaw_to_6d(theta):
    return matrix_to_rotation_6d(yaw_matrix(theta))


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation. axis (3,) need not be unit; angle (...,) -> (..., 3, 3)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=np.float64)
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    eye = np.eye(3)
    return eye + s * k + (1.0 - c) * (k @ k)


def yaw_matrix_torch(theta):
    """Differentiable yaw rotation matrices. theta (...,) -> (..., 3, 3)."""
    c, s = torch.cos(theta), torch.sin(theta)
    z, o = torch.zeros_like(c), torch.ones_like(c)
    rows = [
        torch.stack([c, z, s], dim=-1),
        torch.stack([z, o, z], dim=-1),
        torch.stack([-s, z, c], dim=-1),
    ]
    return torch.stack(rows, dim=-2)
