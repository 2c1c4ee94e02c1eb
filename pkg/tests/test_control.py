import numpy as np
import pytest
import torch

from kinmo.config import ControlConfig
from kinmo.control import (ControlBranch, ControlCheckpoint, SpatialEncoder,
                           TrajectoryConstraint, constraint_errors,
                           constraint_planes, control_loss, control_loss_torch,
                           controlled_generate, encode_trajectory, frozen_checksum,
                           load_constraint, pelvis_constraint, save_constraint)
from kinmo.errors import EmptyMask
from kinmo.generation import TemplateReasonerStub, generate
from kinmo.motion import FEATURE_DIM, MotionSequence
from kinmo.pipeline import PipelineCheckpoints
from kinmo.seeding import seed_everything

from conftest import random_fk_motion


def _zero_motion(t=6, height=0.0):
    feats = np.zeros((t, FEATURE_DIM), dtype=np.float32)
    feats[:, 3] = height
    return MotionSequence(feats)


def test_control_loss_zero_when_equal():
    m = random_fk_motion(np.random.default_rng(0))
    mask = np.zeros((m.frames, 22), dtype=bool)
    mask[0, 0] = True
    mask[3, 5] = True
    assert control_loss(m, m, mask) == 0.0


def test_control_loss_single_entry_arithmetic():
    # single active joint with a (0.3, 0, 0.4) world offset -> 0.25 m^2
    pred = _zero_motion()
    target = _zero_motion()
    pred.features[2, 4:7] = (0.3, 0.0, 0.4)      # joint 1 local position
    mask = np.zeros((6, 22), dtype=bool)
    mask[2, 1] = True
    assert abs(control_loss(pred, target, mask) - 0.25) < 1e-6


def test_control_loss_masked_mean():
    pred = _zero_motion()
    target = _zero_motion()
    pred.features[2, 4:7] = (0.3, 0.0, 0.4)      # error^2 = 0.25 at (2, 1)
    mask = np.zeros((6, 22), dtype=bool)
    mask[2, 1] = True
    mask[4, 3] = True                            # second active entry, zero error
    assert abs(control_loss(pred, target, mask) - 0.125) < 1e-6


def test_control_loss_empty_mask_raises():
    m = _zero_motion()
    with pytest.raises(EmptyMask):
        control_loss(m, m, np.zeros((6, 22), dtype=bool))


def test_control_loss_quadratic_scaling():
    rng = np.random.default_rng(1)
    target = random_fk_motion(rng, frames=8)
    pred = MotionSequence(target.features.copy())
    pred.features[:, 3] += 0.1                   # uniform height error
    mask = np.zeros((8, 22), dtype=bool)
    mask[1, 0] = mask[5, 7] = True
    base = control_loss(pred, target, mask)
    pred2 = MotionSequence(target.features.copy())
    pred2.features[:, 3] += 0.3                  # 3x the error
    assert abs(control_loss(pred2, target, mask) - 9.0 * base) < 1e-6


def test_control_loss_permutation_invariant():
    rng = np.random.default_rng(2)
    pred = random_fk_motion(rng, frames=8)
    target = random_fk_motion(rng, frames=8)
    mask = rng.random((8, 22)) < 0.2
    if not mask.any():
        mask[0, 0] = True
    base = control_loss(pred, target, mask)
    # consistent frame permutation changes the enumeration order only
    mask_entries = list(zip(*np.where(mask)))
    rng.shuffle(mask_entries)
    mask2 = np.zeros_like(mask)
    for i, j in mask_entries:
        mask2[i, j] = True
    assert abs(control_loss(pred, target, mask2) - base) < 1e-12


def test_control_loss_gradcheck():
    rng = np.random.default_rng(3)
    target = torch.as_tensor(rng.normal(scale=0.2, size=(3, FEATURE_DIM)))
    pred = torch.as_tensor(rng.normal(scale=0.2, size=(3, FEATURE_DIM)))
    mask = np.zeros((3, 22), dtype=bool)
    mask[0, 0] = mask[1, 4] = mask[2, 21] = True

    def fn(x):
        return control_loss_torch(x, target, mask)

    x = pred.clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(fn(x), x)
    h = 1e-5
    numeric = torch.zeros_like(pred)
    flat, nflat = pred.reshape(-1), numeric.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        up = float(fn(pred))
        flat[i] = orig - h
        down = float(fn(pred))
        flat[i] = orig
        nflat[i] = (up - down) / (2 * h)
    rel = float((analytic - numeric).abs().max() / numeric.abs().max().clamp(min=1e-12))
    assert rel < 1e-4


def test_constraint_validation_and_file_round_trip(tmp_path):
    mask = np.zeros((5, 22), dtype=bool)
    mask[0, 0] = mask[4, 21] = True
    targets = np.zeros((5, 22, 3))
    targets[0, 0] = (0.125, 0.9, -0.25)
    targets[4, 21] = (1.5, 1.0, 2.0)
    c = TrajectoryConstraint(mask=mask, targets=targets)
    path = tmp_path / "c.traj"
    save_constraint(path, c)
    back = load_constraint(path, frames=5)
    assert np.array_equal(back.mask, c.mask)
    assert np.array_equal(back.targets[back.mask], c.targets[c.mask])
    bad = targets.copy()
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        TrajectoryConstraint(mask=mask, targets=bad)


def test_pelvis_constraint_hits_true_trajectory():
    m = random_fk_motion(np.random.default_rng(4), frames=16)
    c = pelvis_constraint(m, frame_stride=4)
    assert set(np.where(c.mask.any(axis=1))[0]) == {0, 4, 8, 12}
    assert np.all(np.where(c.mask)[1] == 0)
    errs = constraint_errors(m, c)
    assert errs.max() < 1e-9


def test_spatial_encoder_shapes_and_zero_fill_contract(gen8, rqvae8):
    seed_everything(0)
    enc = SpatialEncoder(d_model=gen8.base.cfg.d_model, downsample=4)
    t = 16
    mask = np.zeros((t, 22), dtype=bool)
    mask[3, 0] = True
    targets = np.zeros((t, 22, 3))
    targets[3, 0] = (1.0, 0.9, 0.5)
    c1 = TrajectoryConstraint(mask=mask, targets=targets)
    # junk at mask-false entries must not matter: targets are zero-filled
    noisy = targets.copy()
    noisy[10, 5] = (9.0, 9.0, 9.0)
    c2 = TrajectoryConstraint(mask=mask, targets=noisy)
    p1, p2 = constraint_planes(c1), constraint_planes(c2)
    assert np.array_equal(p1, p2)
    with torch.no_grad():
        o1 = enc(torch.from_numpy(p1[None]))
        o2 = enc(torch.from_numpy(p2[None]))
    assert o1.shape == (1, 4, gen8.base.cfg.d_model)
    assert torch.equal(o1, o2)
    # shifting the active target must change the encoding
    shifted = targets.copy()
    shifted[3, 0] += 1.0
    c3 = TrajectoryConstraint(mask=mask, targets=shifted)
    with torch.no_grad():
        o3 = enc(torch.from_numpy(constraint_planes(c3)[None]))
    assert not torch.equal(o1, o3)


def test_encode_trajectory_deterministic(ckpts_control):
    t = 20
    mask = np.zeros((t, 22), dtype=bool)
    targets = np.zeros((t, 22, 3))
    c = TrajectoryConstraint(mask=mask, targets=targets)
    e1 = encode_trajectory(c, ckpts_control.control)
    e2 = encode_trajectory(c, ckpts_control.control)
    assert np.array_equal(e1, e2)
    assert e1.shape == (5, ckpts_control.generator.base.cfg.d_model)


def test_zero_init_controlled_equals_uncontrolled(toy8, ckpts):
    seed_everything(123)
    branch = ControlBranch(ckpts.generator.base, ckpts.rqvae.config.downsample,
                           ControlConfig())
    assert branch.zero_linked()
    bundle = PipelineCheckpoints(
        alignment=ckpts.alignment, rqvae=ckpts.rqvae, generator=ckpts.generator,
        control=ControlCheckpoint(branch=branch, config=ControlConfig(),
                                  frozen_checksum=""))
    s = toy8[0]
    empty = TrajectoryConstraint(mask=np.zeros((s.motion.frames, 22), bool),
                                 targets=np.zeros((s.motion.frames, 22, 3)))
    for seed in (0, 13, 99):
        ctrl = controlled_generate(s.annotation.global_texts[0], empty, bundle,
                                   seed=seed)
        base = generate(s.annotation.global_texts[0], TemplateReasonerStub(),
                        ckpts, length=s.motion.frames, seed=seed)
        assert np.array_equal(ctrl.motion.features, base.motion.features)


def test_trained_control_hits_training_constraints(toy8, ckpts_control):
    errors = []
    failed = 0
    for s in toy8:
        res = controlled_generate(s.annotation.global_texts[0], s.constraint,
                                  ckpts_control, seed=5)
        errs = constraint_errors(res.motion, s.constraint)
        errors.append(float(errs.mean()))
        failed += int((errs > 0.5).any())
    assert float(np.mean(errors)) < 0.1
    assert failed == 0


def test_frozen_weights_unchanged_after_training(ckpts, ckpts_control):
    assert ckpts_control.control.frozen_checksum == frozen_checksum(
        ckpts.generator, ckpts.rqvae)


def test_controlled_generate_length_mismatch(toy8, ckpts_control):
    s = toy8[0]
    with pytest.raises(ValueError):
        controlled_generate(s.annotation.global_texts[0], s.constraint,
                            ckpts_control, seed=0, length=s.motion.frames + 4)


def test_controlled_generate_deterministic(toy8, ckpts_control):
    s = toy8[1]
    r1 = controlled_generate(s.annotation.global_texts[0], s.constraint,
                             ckpts_control, seed=21)
    r2 = controlled_generate(s.annotation.global_texts[0], s.constraint,
                             ckpts_control, seed=21)
    assert np.array_equal(r1.motion.features, r2.motion.features)
