"""Shared fixtures; the trained desk-scale pipeline is built once per session."""

import numpy as np
import pytest

from kinmo.alignment import train_alignment
from kinmo.config import AlignmentConfig, ControlConfig, GeneratorConfig, RqvaeConfig
from kinmo.control import train_control
from kinmo.generation import rqvae_encode, train_generator, train_rqvae
from kinmo.motion import RootState
from kinmo.pipeline import PipelineCheckpoints
from kinmo.representation import features_from_rotations
from kinmo.rotations import matrix_to_rotation_6d
from kinmo.toydata import ToyCorpusSpec, make_toy_corpus


@pytest.fixture(scope="session")
def toy8():
    return make_toy_corpus(ToyCorpusSpec(n_pairs=8, noise_level=0.02), seed=3)


@pytest.fixture(scope="session")
def align8(toy8):
    pairs = [(s.motion, s.annotation) for s in toy8]
    return train_alignment(pairs, AlignmentConfig(epochs=200), seed=0)


@pytest.fixture(scope="session")
def rqvae8(toy8):
    return train_rqvae([s.motion for s in toy8], RqvaeConfig(), seed=0)


@pytest.fixture(scope="session")
def grids8(toy8, rqvae8):
    return [rqvae_encode(s.motion, rqvae8) for s in toy8]


@pytest.fixture(scope="session")
def gen8(toy8, align8, grids8, rqvae8):
    return train_generator(grids8, [s.annotation for s in toy8], align8,
                           GeneratorConfig(),
                           codebook_size=rqvae8.config.codebook_size, seed=0)


@pytest.fixture(scope="session")
def ckpts(align8, rqvae8, gen8):
    return PipelineCheckpoints(alignment=align8, rqvae=rqvae8, generator=gen8)


@pytest.fixture(scope="session")
def ckpts_control(toy8, grids8, ckpts):
    ctrl = train_control(grids8, [s.constraint for s in toy8],
                         [s.motion for s in toy8],
                         [s.annotation for s in toy8], ckpts,
                         ControlConfig(), seed=0)
    return PipelineCheckpoints(alignment=ckpts.alignment, rqvae=ckpts.rqvae,
                               generator=ckpts.generator, control=ctrl)


@pytest.fixture(scope="session")
def toy64():
    return make_toy_corpus(ToyCorpusSpec(n_pairs=64), seed=5)


@pytest.fixture(scope="session")
def align64(toy64):
    pairs = [(s.motion, s.annotation) for s in toy64]
    return train_alignment(pairs, AlignmentConfig(), seed=0)


def random_fk_motion(rng, frames=None):
    """Random FK-consistent motion: noisy rotations plus a random root path."""
    t = int(rng.integers(24, 56)) if frames is None else frames
    angles = rng.normal(scale=0.3, size=(t, 21))
    axes = rng.normal(size=(21, 3))
    mats = np.zeros((t, 21, 3, 3))
    from kinmo.rotations import axis_angle_matrix

    for j in range(21):
        mats[:, j] = axis_angle_matrix(axes[j], angles[:, j])
    root = RootState(
        angular_velocity=rng.normal(scale=0.05, size=t),
        linear_velocity=rng.normal(scale=0.03, size=(t, 2)),
        height=0.9 + 0.05 * rng.normal(size=t),
    )
    return features_from_rotations(matrix_to_rotation_6d(mats), root)
