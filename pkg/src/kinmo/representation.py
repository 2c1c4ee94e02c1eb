"""Kinematic-group decomposition, forward kinematics, and world-frame transforms.

Group features follow the mean-position / rotation-collection / mean-velocity
formulation; pair features carry the relative position for every group pair
and, for physically connected pairs, the connecting joint's rotation plus the
group velocity difference.

World placement convention: heading(0) = 0 and heading(t) = heading(t-1) +
angular_velocity(t-1); the plane position advances by the stored linear
velocity rotated by the heading of the departure frame. Local joint positions
are root-relative in the heading-aligned frame, so

    world_j(t) = R_y(heading(t)) @ local_j(t) + world_root(t).
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import IncompleteDecomposition, InvalidMotion
from .motion import FEATURE_DIM, MotionSequence, RootState, encode_views
from .rotations import (matrix_to_rotation_6d, rotation_6d_to_matrix, yaw_matrix,
                        yaw_matrix_torch, yaw_to_6d)
from .skeleton import (ALL_PAIRS, DEFAULT_CONNECTIVITY, DEFAULT_SKELETON, GROUP_ORDER,
                       canonical_pair)

# Feet joints backing the 4 contact channels: l_ankle, l_foot, r_ankle, r_foot.
CONTACT_JOINTS = (7, 10, 8, 11)
CONTACT_SPEED = 0.05  # m/frame; below this a foot counts as planted


@dataclass
class GroupFeatures:
    """Per-group position (Eq-1 mean), member rotations, and mean velocity."""

    group: object
    joints: tuple
    position: np.ndarray      # (T, 3)
    limb_angles: np.ndarray   # (T, |J_g|, 6), member-joint order
    velocity: np.ndarray      # (T, 3)


@dataclass
class PairFeatures:
    """Relative features of an (ordered) group pair."""

    pair: tuple
    delta_position: np.ndarray        # (T, 3) = P_h - P_g
    delta_angles: np.ndarray = None   # (T, 6) connecting-joint rotation, connected pairs only
    delta_velocity: np.ndarray = None  # (T, 3) = V_h - V_g, connected pairs only

    @property
    def connected(self):
        return self.delta_angles is not None

    def reversed(self):
        """The same pair viewed in the opposite order: positions/velocities negate."""
        return PairFeatures(
            pair=(self.pair[1], self.pair[0]),
            delta_position=-self.delta_position,
            delta_angles=None if self.delta_angles is None else self.delta_angles.copy(),
            delta_velocity=None if self.delta_velocity is None else -self.delta_velocity,
        )


def integrate_root(root_state, origin=(0.0, 0.0)):
    """Heading angles (T,) and world root positions (T, 3) from root channels."""
    omega = np.asarray(root_state.angular_velocity, dtype=np.float64)
    vel = np.asarray(root_state.linear_velocity, dtype=np.float64)
    height = np.asarray(root_state.height, dtype=np.float64)
    t = omega.shape[0]

    heading = np.zeros(t)
    heading[1:] = np.cumsum(omega[:-1])

    pos = np.zeros((t, 3))
    if t > 1:
        rot = yaw_matrix(heading[:-1])                     # departure-frame heading
        step = np.stack([vel[:-1, 0], np.zeros(t - 1), vel[:-1, 1]], axis=-1)
        world_step = np.einsum("tij,tj->ti", rot, step)
        pos[1:, 0] = np.cumsum(world_step[:, 0])
        pos[1:, 2] = np.cumsum(world_step[:, 2])
    pos[:, 0] += origin[0]
    pos[:, 2] += origin[1]
    pos[:, 1] = height
    return heading, pos


def local_to_global(motion, skeleton=DEFAULT_SKELETON, origin=(0.0, 0.0)):
    """World positions R(motion): (T, 22, 3). Deterministic."""
    heading, root = integrate_root(motion.root_state, origin)
    rot = yaw_matrix(heading)                              # (T, 3, 3)
    local = motion.local_positions.astype(np.float64)      # (T, 21, 3)
    world = np.empty((motion.frames, skeleton.joint_count, 3))
    world[:, 0] = root
    world[:, 1:] = np.einsum("tij,tkj->tki", rot, local) + root[:, None, :]
    return world


def local_to_global_torch(features, origin=(0.0, 0.0)):
    """Differentiable R(.) on a (T, 263) feature tensor -> (T, 22, 3)."""
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise InvalidMotion(f"expected (T, {FEATURE_DIM}) features, got {tuple(features.shape)}")
    t = features.shape[0]
    omega = features[:, 0]
    vel = features[:, 1:3]
    height = features[:, 3]
    local = features[:, 4:67].reshape(t, 21, 3)

    zero = features.new_zeros(1)
    heading = torch.cat([zero, torch.cumsum(omega[:-1], dim=0)]) if t > 1 else zero
    rot = yaw_matrix_torch(heading)

    root = features.new_zeros((t, 3)) + 0.0
    if t > 1:
        step = torch.stack([vel[:-1, 0], torch.zeros_like(vel[:-1, 0]), vel[:-1, 1]], dim=-1)
        world_step = torch.einsum("tij,tj->ti", rot[:-1], step)
        walked = torch.cumsum(world_step, dim=0)
        root = torch.cat([features.new_zeros((1, 3)), walked], dim=0)
    root = root + features.new_tensor([origin[0], 0.0, origin[1]])
    root = torch.stack([root[:, 0], height, root[:, 2]], dim=-1)

    world = torch.einsum("tij,tkj->tki", rot, local) + root[:, None, :]
    return torch.cat([root[:, None, :], world], dim=1)


def forward_kinematics(rotations_6d, root_state, skeleton=DEFAULT_SKELETON,
                       origin=(0.0, 0.0)):
    """Global joint positions (T, 22, 3) from local 6D rotations and root channels.

    Joint j sits at its parent's position plus the parent's global rotation
    applied to the rest offset; the root is placed by the integrated root
    trajectory and rotated by the heading.
    """
    rotations_6d = np.asarray(rotations_6d, dtype=np.float64)
    t = rotations_6d.shape[0]
    if rotations_6d.shape != (t, 21, 6):
        raise InvalidMotion(f"rotations must be (T, 21, 6), got {rotations_6d.shape}")

    heading, root = integrate_root(root_state, origin)
    local_mats = rotation_6d_to_matrix(rotations_6d)       # (T, 21, 3, 3)

    n = skeleton.joint_count
    world_rot = np.empty((t, n, 3, 3))
    world_pos = np.empty((t, n, 3))
    world_rot[:, 0] = yaw_matrix(heading)
    world_pos[:, 0] = root
    offsets = skeleton.rest_offsets
    for j in range(1, n):
        p = skeleton.parent_index[j]
        world_rot[:, j] = world_rot[:, p] @ local_mats[:, j - 1]
        world_pos[:, j] = world_pos[:, p] + np.einsum("tij,j->ti", world_rot[:, p], offsets[j])
    return world_pos


def _canonical_root_state(root_state):
    """Round root channels through float32 so rebuilt features are bit-stable."""
    return RootState(
        angular_velocity=np.asarray(root_state.angular_velocity, dtype=np.float32).astype(np.float64),
        linear_velocity=np.asarray(root_state.linear_velocity, dtype=np.float32).astype(np.float64),
        height=np.asarray(root_state.height, dtype=np.float32).astype(np.float64),
    )


def features_from_rotations(rotations_6d, root_state, skeleton=DEFAULT_SKELETON):
    """Canonical constructor of an FK-consistent MotionSequence.

    Local positions come from forward kinematics, joint velocities are world
    finite differences (last frame repeated), and foot contacts follow the
    CONTACT_SPEED rule on the float32-rounded velocities. Inputs are rounded
    through float32 first so rebuilding from stored features is bit-exact.
    """
    rotations_6d = np.asarray(rotations_6d, dtype=np.float32).astype(np.float64)
    root_state = _canonical_root_state(root_state)
    t = rotations_6d.shape[0]

    world = forward_kinematics(rotations_6d, root_state, skeleton)
    heading, root = integrate_root(root_state)
    inv_rot = yaw_matrix(-heading)
    local = np.einsum("tij,tkj->tki", inv_rot, world[:, 1:] - root[:, None, :])

    vel = np.zeros((t, 22, 3))
    if t > 1:
        vel[:-1] = np.diff(world, axis=0)
        vel[-1] = vel[-2]
    vel32 = vel.astype(np.float32)

    speeds = np.linalg.norm(vel32[:, CONTACT_JOINTS, :].astype(np.float32), axis=-1)
    contacts = (speeds < CONTACT_SPEED).astype(np.float32)

    feats = encode_views(
        root_state.angular_velocity, root_state.linear_velocity, root_state.height,
        local, rotations_6d, vel32, contacts)
    return MotionSequence(feats)


def root_yaw_6d(motion):
    """Heading rotation of the root joint per frame, in 6D form: (T, 6)."""
    heading, _ = integrate_root(motion.root_state)
    return yaw_to_6d(heading)


def decompose(motion, skeleton=DEFAULT_SKELETON, connectivity=DEFAULT_CONNECTIVITY):
    """Split a motion into 6 GroupFeatures and 15 PairFeatures.

    Joint positions for the group means are root-relative heading-frame
    coordinates (the root joint sits at the origin); the root joint's rotation
    entry is the heading yaw.
    """
    if skeleton.joint_count != 22:
        raise InvalidMotion("decompose expects the 22-joint skeleton")
    t = motion.frames

    positions = np.zeros((t, 22, 3))
    positions[:, 1:] = motion.local_positions.astype(np.float64)
    velocities = motion.joint_velocities.astype(np.float64)

    rot6 = np.zeros((t, 22, 6))
    rot6[:, 0] = root_yaw_6d(motion)
    rot6[:, 1:] = motion.rotations_6d.astype(np.float64)

    groups = {}
    for g in GROUP_ORDER:
        joints = skeleton.joints_of(g)
        members = list(joints)
        groups[g] = GroupFeatures(
            group=g,
            joints=joints,
            position=positions[:, members].mean(axis=1),
            limb_angles=rot6[:, members],
            velocity=velocities[:, members].mean(axis=1),
        )

    pairs = {}
    for g, h in ALL_PAIRS:
        delta_p = groups[h].position - groups[g].position
        if connectivity.is_connected(g, h):
            joint = connectivity.connecting_joint[canonical_pair(g, h)]
            pairs[(g, h)] = PairFeatures(
                pair=(g, h),
                delta_position=delta_p,
                delta_angles=rot6[:, joint],
                delta_velocity=groups[h].velocity - groups[g].velocity,
            )
        else:
            pairs[(g, h)] = PairFeatures(pair=(g, h), delta_position=delta_p)
    return groups, pairs


def recompose(group_features, root_state, skeleton=DEFAULT_SKELETON):
    """Rebuild a MotionSequence from group features plus root channels.

    Rotations and root channels are authoritative; positions, velocities, and
    foot contacts are regenerated through forward kinematics.
    """
    rot_by_joint = {}
    for g in GROUP_ORDER:
        feats = group_features.get(g)
        if feats is None:
            raise IncompleteDecomposition(f"missing group {g}")
        for k, j in enumerate(feats.joints):
            rot_by_joint[j] = feats.limb_angles[:, k]
    missing = [j for j in range(1, 22) if j not in rot_by_joint]
    if missing:
        raise IncompleteDecomposition(f"rotations missing for joints {missing}")

    rotations = np.stack([rot_by_joint[j] for j in range(1, 22)], axis=1)
    return features_from_rotations(rotations, root_state, skeleton)


def mirror_motion(motion, skeleton=DEFAULT_SKELETON):
    """Reflect a motion across the x=0 plane, swapping left/right joints."""
    from .skeleton import MIRROR_JOINT

    t = motion.frames
    flip = np.array([-1.0, 1.0, 1.0])

    # joints 1..21 permutation in view index space
    perm21 = np.array([MIRROR_JOINT[j] - 1 for j in range(1, 22)])
    perm22 = np.array([MIRROR_JOINT[j] for j in range(22)])

    local = motion.local_positions[:, perm21] * flip
    vel = motion.joint_velocities[:, perm22] * flip

    mats = rotation_6d_to_matrix(motion.rotations_6d.astype(np.float64))
    refl = np.diag([-1.0, 1.0, 1.0])
    mirrored = refl @ mats[:, perm21] @ refl
    rot6 = matrix_to_rotation_6d(mirrored)

    contacts = motion.foot_contacts[:, [2, 3, 0, 1]]

    feats = encode_views(
        -motion.root_angular_velocity,
        motion.root_linear_velocity * np.array([-1.0, 1.0], dtype=np.float32),
        motion.root_height,
        local, rot6, vel, contacts)
    return MotionSequence(feats)
