"""22-joint SMPL-order skeleton, kinematic groups, and group connectivity."""

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np

from .errors import InvalidMotion

JOINT_COUNT = 22

# SMPL order: 0 pelvis, 1/2 hips, 3 spine1, 4/5 knees, 6 spine2, 7/8 ankles,
# 9 spine3, 10/11 feet, 12 neck, 13/14 collars, 15 head, 16/17 shoulders,
# 18/19 elbows, 20/21 wrists.
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

# Rest-pose bone directions (unit, toward the joint from its parent).
_BONE_DIRS = np.array([
    [0, 0, 0],
    [1, 0, 0], [-1, 0, 0], [0, 1, 0],
    [0, -1, 0], [0, -1, 0], [0, 1, 0],
    [0, -1, 0], [0, -1, 0], [0, 1, 0],
    [0, 0, 1], [0, 0, 1], [0, 1, 0],
    [1, 0, 0], [-1, 0, 0], [0, 1, 0],
    [0, -1, 0], [0, -1, 0], [0, -1, 0],
    [0, -1, 0], [0, -1, 0], [0, -1, 0],
], dtype=np.float64)

# Bone lengths in meters (left/right symmetric).
_BONE_LENGTHS = np.array([
    0.0,
    0.11, 0.11, 0.12,
    0.38, 0.38, 0.14,
    0.40, 0.40, 0.16,
    0.13, 0.13, 0.08,
    0.10, 0.10, 0.12,
    0.12, 0.12, 0.26,
    0.26, 0.25, 0.25,
], dtype=np.float64)


class KinematicGroup(str, Enum):
    TORSO = "Torso"
    NECK = "Neck"
    LEFT_ARM = "LeftArm"
    RIGHT_ARM = "RightArm"
    LEFT_LEG = "LeftLeg"
    RIGHT_LEG = "RightLeg"

    def __str__(self):
        return self.value


GROUP_ORDER = (
    KinematicGroup.TORSO,
    KinematicGroup.NECK,
    KinematicGroup.LEFT_ARM,
    KinematicGroup.RIGHT_ARM,
    KinematicGroup.LEFT_LEG,
    KinematicGroup.RIGHT_LEG,
)

GROUP_JOINTS = {
    KinematicGroup.TORSO: (0, 3, 6, 9),
    KinematicGroup.NECK: (12, 15),
    KinematicGroup.LEFT_ARM: (13, 16, 18, 20),
    KinematicGroup.RIGHT_ARM: (14, 17, 19, 21),
    KinematicGroup.LEFT_LEG: (1, 4, 7, 10),
    KinematicGroup.RIGHT_LEG: (2, 5, 8, 11),
}

# Left/right joint counterparts (for mirror augmentation).
MIRROR_JOINT = {0: 0, 3: 3, 6: 6, 9: 9, 12: 12, 15: 15,
                1: 2, 4: 5, 7: 8, 10: 11, 13: 14, 16: 17, 18: 19, 20: 21}
MIRROR_JOINT.update({v: k for k, v in MIRROR_JOINT.items()})


def canonical_pair(g, h):
    """Unordered group pair in the fixed GROUP_ORDER."""
    ig, ih = GROUP_ORDER.index(g), GROUP_ORDER.index(h)
    if ig == ih:
        raise ValueError("a pair needs two distinct groups")
    return (g, h) if ig < ih else (h, g)


ALL_PAIRS = tuple(combinations(GROUP_ORDER, 2))  # 15 unordered pairs


@dataclass(frozen=True)
class JointSkeleton:
    """Kinematic tree with rest offsets and group membership."""

    parent_index: tuple = PARENTS
    rest_offsets: np.ndarray = field(default_factory=lambda: _BONE_DIRS * _BONE_LENGTHS[:, None])
    group_of: dict = field(default_factory=lambda: {
        j: g for g, joints in GROUP_JOINTS.items() for j in joints})

    @property
    def joint_count(self):
        return len(self.parent_index)

    def __post_init__(self):
        n = self.joint_count
        if n != JOINT_COUNT:
            raise InvalidMotion(f"expected {JOINT_COUNT} joints, got {n}")
        roots = [j for j, p in enumerate(self.parent_index) if p == -1]
        if roots != [0]:
            raise InvalidMotion("parent graph must be rooted at joint 0")
        for j, p in enumerate(self.parent_index):
            if j > 0 and not 0 <= p < j:
                raise InvalidMotion("parents must precede children (tree, no cycles)")
        if sorted(self.group_of) != list(range(n)):
            raise InvalidMotion("group_of must cover every joint exactly once")

    def joints_of(self, group):
        return tuple(j for j in range(self.joint_count) if self.group_of[j] == group)

    def children_order(self):
        """Joint indices in parent-before-child order (SMPL order already is)."""
        return tuple(range(self.joint_count))


@dataclass(frozen=True)
class GroupConnectivity:
    """Which group pairs are physically connected, and through which joint."""

    connecting_joint: dict = field(default_factory=lambda: {
        canonical_pair(KinematicGroup.TORSO, KinematicGroup.NECK): 12,
        canonical_pair(KinematicGroup.TORSO, KinematicGroup.LEFT_ARM): 13,
        canonical_pair(KinematicGroup.TORSO, KinematicGroup.RIGHT_ARM): 14,
        canonical_pair(KinematicGroup.TORSO, KinematicGroup.LEFT_LEG): 1,
        canonical_pair(KinematicGroup.TORSO, KinematicGroup.RIGHT_LEG): 2,
    })

    @property
    def connected_pairs(self):
        return frozenset(self.connecting_joint)

    def is_connected(self, g, h):
        return canonical_pair(g, h) in self.connecting_joint


DEFAULT_SKELETON = JointSkeleton()
DEFAULT_CONNECTIVITY = GroupConnectivity()
