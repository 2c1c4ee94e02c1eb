"""Per-frame 263-dim motion feature matrix with decoded views, and KMOT file I/O.

Feature layout per frame (HumanML3D channel order, 22 joints):
  [0]       root angular velocity about +y  (rad/frame)
  [1:3]     root linear velocity on the ground plane, heading frame (m/frame)
  [3]       root height (m)
  [4:67]    local positions of joints 1..21, root-relative, heading-aligned (m)
  [67:193]  6D local rotations of joints 1..21
  [193:259] world-frame joint velocities, all 22 joints (m/frame)
  [259:263] foot contact labels (l_ankle, l_foot, r_ankle, r_foot), in [0,1]

Velocities are per frame at 20 fps; world placement of frame t uses the
heading integrated from angular velocities of frames < t.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidMotion

FEATURE_DIM = 263
FPS = 20

_ROOT_ANG = slice(0, 1)
_ROOT_LIN = slice(1, 3)
_ROOT_HEIGHT = slice(3, 4)
_LOCAL_POS = slice(4, 67)
_ROT_6D = slice(67, 193)
_JOINT_VEL = slice(193, 259)
_FOOT = slice(259, 263)

KMOT_MAGIC = b"KMOT"
KMOT_VERSION = 1


@dataclass
class RootState:
    """Root channels of a motion: (T,) yaw velocity, (T,2) plane velocity, (T,) height."""

    angular_velocity: np.ndarray
    linear_velocity: np.ndarray
    height: np.ndarray

    @property
    def frames(self):
        return self.angular_velocity.shape[0]


class MotionSequence:
    """A T x 263 feature matrix plus typed views into its channels."""

    def __init__(self, features):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise InvalidMotion(f"features must be 2-D, got shape {features.shape}")
        if features.shape[1] != FEATURE_DIM:
            raise InvalidMotion(
                f"features must have {FEATURE_DIM} channels, got {features.shape[1]}")
        if features.shape[0] < 1:
            raise InvalidMotion("motion needs at least one frame")
        if not np.all(np.isfinite(features)):
            raise InvalidMotion("features contain non-finite values")
        fc = features[:, _FOOT]
        if fc.min() < 0.0 or fc.max() > 1.0:
            raise InvalidMotion("foot contacts must lie in [0, 1]")
        self.features = features

    @property
    def frames(self):
        return self.features.shape[0]

    # -- decoded views (reshaped slices of the feature matrix) --

    @property
    def root_angular_velocity(self):
        return self.features[:, _ROOT_ANG]

    @property
    def root_linear_velocity(self):
        return self.features[:, _ROOT_LIN]

    @property
    def root_height(self):
        return self.features[:, _ROOT_HEIGHT]

    @property
    def local_positions(self):
        return self.features[:, _LOCAL_POS].reshape(self.frames, 21, 3)

    @property
    def rotations_6d(self):
        return self.features[:, _ROT_6D].reshape(self.frames, 21, 6)

    @property
    def joint_velocities(self):
        return self.features[:, _JOINT_VEL].reshape(self.frames, 22, 3)

    @property
    def foot_contacts(self):
        return self.features[:, _FOOT]

    @property
    def root_state(self):
        return RootState(
            angular_velocity=self.root_angular_velocity[:, 0].astype(np.float64),
            linear_velocity=self.root_linear_velocity.astype(np.float64),
            height=self.root_height[:, 0].astype(np.float64),
        )

    def copy(self):
        return MotionSequence(self.features.copy())

    def __eq__(self, other):
        return isinstance(other, MotionSequence) and np.array_equal(
            self.features, other.features)


def encode_views(root_angular_velocity, root_linear_velocity, root_height,
                 local_positions, rotations_6d, joint_velocities, foot_contacts):
    """Pack decoded views back into a T x 263 feature matrix."""
    t = np.asarray(root_height).shape[0]
    parts = [
        np.asarray(root_angular_velocity, dtype=np.float32).reshape(t, 1),
        np.asarray(root_linear_velocity, dtype=np.float32).reshape(t, 2),
        np.asarray(root_height, dtype=np.float32).reshape(t, 1),
        np.asarray(local_positions, dtype=np.float32).reshape(t, 63),
        np.asarray(rotations_6d, dtype=np.float32).reshape(t, 126),
        np.asarray(joint_velocities, dtype=np.float32).reshape(t, 66),
        np.asarray(foot_contacts, dtype=np.float32).reshape(t, 4),
    ]
    return np.concatenate(parts, axis=1)


def save_kmot(path, motion):
    """Write a motion to the KMOT binary format (little-endian float32)."""
    feats = motion.features if isinstance(motion, MotionSequence) else np.asarray(motion)
    feats = np.ascontiguousarray(feats, dtype="<f4")
    header = KMOT_MAGIC + struct.pack("<III", KMOT_VERSION, feats.shape[0], feats.shape[1])
    with open(path, "wb") as f:
        f.write(header)
        f.write(feats.tobytes())


def load_kmot(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != KMOT_MAGIC:
        raise InvalidMotion(f"{path}: not a KMOT file")
    version, t, d = struct.unpack("<III", raw[4:16])
    if version != KMOT_VERSION:
        raise InvalidMotion(f"{path}: unsupported KMOT version {version}")
    body = raw[16:]
    if len(body) != 4 * t * d:
        raise InvalidMotion(f"{path}: truncated KMOT payload")
    feats = np.frombuffer(body, dtype="<f4").reshape(t, d)
    return MotionSequence(feats.copy())
