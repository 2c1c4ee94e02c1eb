"""Synthetic FK-consistent toy corpus: sinusoidal limb motions in five families.

Each sample draws a (family, side, speed, amplitude) descriptor without
replacement from the caption grammar, so captions are unique within a corpus
and the paired annotation is exactly what the template reasoner would produce
from the caption.
"""

from dataclasses import dataclass, field

import numpy as np

from .annotation import HierarchicalAnnotation
from .control import pelvis_constraint
from .errors import KinmoError
from .motion import RootState
from .representation import features_from_rotations
from .rotations import axis_angle_matrix, matrix_to_rotation_6d
from .skeleton import DEFAULT_SKELETON
from .templates import (AMP_SCALE, AMP_WORDS, FAMILIES, MotionDescriptor, SPEED_FREQ,
                        SPEED_WORDS, caption_for, interaction_texts_for,
                        joint_texts_for)

_REST_HEIGHT = 0.9

# rotation view indices (joint - 1)
_L_HIP, _R_HIP = 0, 1
_L_KNEE, _R_KNEE = 3, 4
_L_SHOULDER, _R_SHOULDER = 15, 16
_L_ELBOW, _R_ELBOW = 17, 18


@dataclass
class ToyCorpusSpec:
    n_pairs: int = 8
    families: tuple = FAMILIES
    min_length: int = 32
    max_length: int = 48
    noise_level: float = 0.01
    amplitude: float = 0.45

    def __post_init__(self):
        if self.n_pairs < 1:
            raise KinmoError("n_pairs must be >= 1")
        if not self.families:
            raise KinmoError("families must be nonempty")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise KinmoError(f"unknown families {bad}; known: {FAMILIES}")
        if not 1 <= self.min_length <= self.max_length:
            raise KinmoError("need 1 <= min_length <= max_length")


def descriptor_pool(families):
    """All distinct caption descriptors for the given families, fixed order."""
    pool = []
    for fam in FAMILIES:
        if fam not in families:
            continue
        if fam == "still":
            pool.append(MotionDescriptor("still", "", "steadily", "moderately"))
            continue
        sides = ("left", "right") if fam in ("wave", "turn") else ("",)
        for side in sides:
            for speed in SPEED_WORDS:
                for amp in AMP_WORDS:
                    pool.append(MotionDescriptor(fam, side, speed, amp))
    return pool


def _angles(length, freq, phase=0.0):
    t = np.arange(length)
    return np.sin(2.0 * np.pi * freq * t / max(length - 1, 1) + phase)


def toy_motion(desc, length, rng, noise_level=0.01, base_amplitude=0.45,
               skeleton=DEFAULT_SKELETON):
    """Build one FK-consistent motion for a descriptor."""
    amp = base_amplitude * AMP_SCALE[desc.amplitude]
    freq = SPEED_FREQ[desc.speed]
    mats = np.broadcast_to(np.eye(3), (length, 21, 3, 3)).copy()
    omega = np.zeros(length)
    linvel = np.zeros((length, 2))
    height = np.full(length, _REST_HEIGHT)
    wave = _angles(length, freq)

    if desc.family == "wave":
        shoulder = _L_SHOULDER if desc.side == "left" else _R_SHOULDER
        elbow = _L_ELBOW if desc.side == "left" else _R_ELBOW
        lift = np.pi / 2.5 if desc.side == "right" else -np.pi / 2.5
        mats[:, shoulder] = axis_angle_matrix((0, 0, 1), np.full(length, -lift))
        mats[:, elbow] = axis_angle_matrix((0, 0, 1), amp * wave)
    elif desc.family == "walk":
        swing = amp * 0.8
        mats[:, _L_HIP] = axis_angle_matrix((1, 0, 0), swing * wave)
        mats[:, _R_HIP] = axis_angle_matrix((1, 0, 0), -swing * wave)
        mats[:, _L_KNEE] = axis_angle_matrix((1, 0, 0), swing * 0.5 * (1 + wave))
        mats[:, _R_KNEE] = axis_angle_matrix((1, 0, 0), swing * 0.5 * (1 - wave))
        linvel[:, 1] = 0.03 * freq * AMP_SCALE[desc.amplitude]
    elif desc.family == "squat":
        bend = amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * freq * np.arange(length)
                                         / max(length - 1, 1)))
        mats[:, _L_HIP] = axis_angle_matrix((1, 0, 0), -bend)
        mats[:, _R_HIP] = axis_angle_matrix((1, 0, 0), -bend)
        mats[:, _L_KNEE] = axis_angle_matrix((1, 0, 0), 1.6 * bend)
        mats[:, _R_KNEE] = axis_angle_matrix((1, 0, 0), 1.6 * bend)
        height = _REST_HEIGHT - 0.18 * bend / max(amp, 1e-9) * amp
    elif desc.family == "turn":
        total = (np.pi / 2.0) * AMP_SCALE[desc.amplitude]
        sign = 1.0 if desc.side == "left" else -1.0
        omega[:] = sign * total * freq / max(length - 1, 1)

    if noise_level > 0:
        for j in range(21):
            axis = rng.normal(size=3)
            jitter = rng.normal(scale=noise_level, size=length)
            mats[:, j] = mats[:, j] @ axis_angle_matrix(axis, jitter)

    rot6 = matrix_to_rotation_6d(mats)
    root = RootState(angular_velocity=omega, linear_velocity=linvel, height=height)
    return features_from_rotations(rot6, root, skeleton)


def toy_annotation(desc):
    return HierarchicalAnnotation(
        global_texts=[caption_for(desc)],
        joint_texts=joint_texts_for(desc),
        interaction_texts=interaction_texts_for(desc),
    )


@dataclass
class ToySample:
    entry_id: str
    descriptor: MotionDescriptor
    motion: object
    annotation: HierarchicalAnnotation
    constraint: object


def _round_robin_descriptors(pool, n, rng):
    """Cycle through families so small corpora stay family-diverse.

    Each family's descriptors are drawn without replacement; once a family is
    exhausted it drops out of the cycle. Captions repeat only when n exceeds
    the whole pool.
    """
    by_family = {}
    for idx in rng.permutation(len(pool)):
        by_family.setdefault(pool[idx].family, []).append(pool[idx])
    out = []
    while len(out) < n:
        cycle = [f for f in FAMILIES if by_family.get(f)]
        if not cycle:
            by_family = {}
            for idx in rng.permutation(len(pool)):
                by_family.setdefault(pool[idx].family, []).append(pool[idx])
            cycle = [f for f in FAMILIES if by_family.get(f)]
        for fam in cycle:
            if len(out) >= n:
                break
            out.append(by_family[fam].pop(0))
    return out


def make_toy_corpus(spec=None, seed=0, skeleton=DEFAULT_SKELETON):
    """Deterministic list of toy samples (motion + annotation + constraint)."""
    spec = spec or ToyCorpusSpec()
    rng = np.random.default_rng(seed)
    pool = descriptor_pool(spec.families)
    descriptors = _round_robin_descriptors(pool, spec.n_pairs, rng)
    samples = []
    for i in range(spec.n_pairs):
        desc = descriptors[i]
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        motion = toy_motion(desc, length, rng, spec.noise_level, spec.amplitude,
                            skeleton)
        samples.append(ToySample(
            entry_id=f"{i:04d}",
            descriptor=desc,
            motion=motion,
            annotation=toy_annotation(desc),
            constraint=pelvis_constraint(motion, frame_stride=4, skeleton=skeleton),
        ))
    return samples
