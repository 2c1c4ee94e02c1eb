"""Trajectory control: spatial encoder, trainable generator copy, control loss.

The control branch is a trainable copy of the frozen masked generator's
blocks, linked back into the frozen stack through zero-initialized
projections, so before any training step the controlled forward pass equals
the frozen one exactly. Sparse (frame, joint) position targets enter through
a strided convolutional spatial encoder whose output aligns with the motion
token grid.
"""

import copy
import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import blobs_to_state_dict, load_blobs, save_blobs
from .config import ControlConfig, section_digest
from .errors import EmptyMask, FrozenWeightMutation, TrainingDiverged
from .generation.conditioning import condition_tokens_from_annotation, condition_tokens_from_text
from .generation.masked import (LEVEL_SEQUENCE, coarse_to_fine_fill, mask_schedule,
                                predict_residual_layers)
from .generation.reasoner import TemplateReasonerStub
from .generation.rqvae import MotionTokenGrid, rqvae_decode
from .motion import MotionSequence
from .representation import local_to_global, local_to_global_torch
from .seeding import seed_everything
from .skeleton import DEFAULT_SKELETON

COMPONENT = "control"


@dataclass
class TrajectoryConstraint:
    """Sparse global position targets: boolean (T, 22) mask + (T, 22, 3) targets."""

    mask: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        t, j = self.mask.shape
        if self.targets.shape != (t, j, 3):
            raise ValueError("targets must be (T, 22, 3) matching the mask")
        if not np.all(np.isfinite(self.targets[self.mask])):
            raise ValueError("targets must be finite where the mask is active")

    @property
    def frames(self):
        return self.mask.shape[0]

    @property
    def active_count(self):
        return int(self.mask.sum())


def save_constraint(path, constraint):
    lines = []
    for i, j in zip(*np.where(constraint.mask)):
        x, y, z = (float(v) for v in constraint.targets[i, j])
        lines.append(f"{i} {j} {x!r} {y!r} {z!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def load_constraint(path, frames=None, joints=22):
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            entries.append((int(parts[0]), int(parts[1]),
                            float(parts[2]), float(parts[3]), float(parts[4])))
    if frames is None:
        frames = max(i for i, *_ in entries) + 1 if entries else 1
    mask = np.zeros((frames, joints), dtype=bool)
    targets = np.zeros((frames, joints, 3))
    for i, j, x, y, z in entries:
        mask[i, j] = True
        targets[i, j] = (x, y, z)
    return TrajectoryConstraint(mask=mask, targets=targets)


def pelvis_constraint(motion, frame_stride=4, skeleton=DEFAULT_SKELETON):
    """Pelvis-only constraint sampled from a motion's own global trajectory."""
    world = local_to_global(motion, skeleton)
    t = motion.frames
    mask = np.zeros((t, skeleton.joint_count), dtype=bool)
    targets = np.zeros((t, skeleton.joint_count, 3))
    idx = np.arange(0, t, frame_stride)
    mask[idx, 0] = True
    targets[idx, 0] = world[idx, 0]
    return TrajectoryConstraint(mask=mask, targets=targets)


# -- control loss (Eq-style masked mean of squared global position errors) --

def control_loss_torch(pred_features, target_features, mask):
    """Differentiable masked mean ||R(pred) - R(target)||^2 over active (i, j)."""
    mask = torch.as_tensor(np.asarray(mask, dtype=np.float64))
    total = mask.sum()
    if float(total) == 0:
        raise EmptyMask("control loss needs at least one active mask entry")
    gp = local_to_global_torch(pred_features)
    gt = local_to_global_torch(target_features)
    err = ((gp - gt) ** 2).sum(dim=-1)
    return (err * mask.to(err.dtype)).sum() / total.to(err.dtype)


def control_loss(pred, target, mask, skeleton=DEFAULT_SKELETON):
    """Masked mean squared global-position error between two motions (m^2)."""
    with torch.no_grad():
        loss = control_loss_torch(
            torch.from_numpy(pred.features.astype(np.float64)),
            torch.from_numpy(target.features.astype(np.float64)),
            mask)
    return float(loss)


class SpatialEncoder(nn.Module):
    """(T, 22, 4) mask-and-target planes -> (T', d) control tokens via 3 conv stages."""

    def __init__(self, d_model, downsample=4, joints=22):
        super().__init__()
        if downsample & (downsample - 1):
            raise ValueError("downsample must be a power of two")
        strided = int(math.log2(downsample))
        layers = [nn.Conv1d(joints * 4, d_model, 3, padding=1), nn.ReLU()]
        for _ in range(strided):
            layers += [nn.Conv1d(d_model, d_model, 4, stride=2, padding=1), nn.ReLU()]
        layers += [nn.Conv1d(d_model, d_model, 3, padding=1)]
        self.net = nn.Sequential(*layers)
        self.downsample = downsample
        self.joints = joints

    def forward(self, planes):
        # planes (B, T, 22, 4), T a multiple of downsample
        b, t = planes.shape[:2]
        x = planes.reshape(b, t, -1).transpose(1, 2)
        return self.net(x).transpose(1, 2)


def constraint_planes(constraint, pad_to=None):
    """Stack zero-filled targets with the mask channel: (T_pad, 22, 4) float32."""
    t = constraint.frames
    planes = np.zeros((t, constraint.mask.shape[1], 4), dtype=np.float32)
    planes[..., :3] = constraint.targets * constraint.mask[..., None]
    planes[..., 3] = constraint.mask
    if pad_to is not None and pad_to > t:
        planes = np.concatenate(
            [planes, np.zeros((pad_to - t,) + planes.shape[1:], dtype=np.float32)], axis=0)
    return planes


class ControlBranch(nn.Module):
    """Trainable copy of the frozen generator blocks with zero-init links."""

    def __init__(self, base, downsample, config=None):
        super().__init__()
        cfg = config or ControlConfig()
        d = base.cfg.d_model
        self.spatial = SpatialEncoder(d, downsample)
        self.copy_blocks = copy.deepcopy(base.blocks)
        for p in self.copy_blocks.parameters():
            p.requires_grad_(True)
        self.link_in = nn.Linear(d, d)
        self.link_out = nn.ModuleList(nn.Linear(d, d) for _ in base.blocks)
        nn.init.zeros_(self.link_in.weight)
        nn.init.zeros_(self.link_in.bias)
        for lin in self.link_out:
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)
        if cfg.inject_layers == "all":
            self.inject = tuple(range(len(base.blocks)))
        else:
            self.inject = tuple(int(i) for i in cfg.inject_layers.split(",") if i != "")

    @torch.no_grad()
    def zero_linked(self):
        return all(float(lin.weight.abs().max()) == 0.0
                   and float(lin.bias.abs().max()) == 0.0 for lin in self.link_out)


def controlled_logits(base, branch, tokens, cond, control_tokens, drop=None,
                      token_pad=None):
    """Frozen generator forward with per-block additive guidance from the copy."""
    x, cond_len = base.embed_inputs(tokens, cond, drop)
    pad = base.full_pad_mask(token_pad, cond_len)
    c = x.clone()
    c[:, cond_len:] = c[:, cond_len:] + branch.link_in(control_tokens)
    h = x
    for i, (frozen_block, copy_block) in enumerate(zip(base.blocks, branch.copy_blocks)):
        c = copy_block(c, key_padding_mask=pad)
        h = frozen_block(h, key_padding_mask=pad)
        if i in branch.inject:
            h = h + branch.link_out[i](c)
    return base.head(h[:, cond_len:])


def guided_controlled_logits(base, branch, tokens, cond, control_tokens, scale,
                             token_pad=None):
    uncond = controlled_logits(base, branch, tokens, None, control_tokens,
                               token_pad=token_pad)
    if scale == 0.0:
        return uncond
    conditional = controlled_logits(base, branch, tokens, cond, control_tokens,
                                    token_pad=token_pad)
    return uncond + scale * (conditional - uncond)


@dataclass
class ControlCheckpoint:
    branch: ControlBranch
    config: ControlConfig
    frozen_checksum: str


def frozen_checksum(gen_checkpoint, rqvae_checkpoint):
    """sha256 over every frozen weight byte (generator, residual head, RQ-VAE)."""
    digest = hashlib.sha256()
    for module in (gen_checkpoint.base, gen_checkpoint.residual, rqvae_checkpoint.model):
        state = module.state_dict()
        for name in sorted(state):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(
                state[name].detach().cpu().numpy(), dtype="<f4").tobytes())
    return digest.hexdigest()


def encode_trajectory(constraint, control_checkpoint):
    """Control tokens (T', d) for a constraint; zero-filled outside the mask."""
    branch = control_checkpoint.branch
    r = branch.spatial.downsample
    pad_to = math.ceil(constraint.frames / r) * r
    planes = constraint_planes(constraint, pad_to)
    with torch.no_grad():
        out = branch.spatial(torch.from_numpy(planes[None]))
    return out[0].numpy()


def train_control(grids, constraints, target_motions, annotations, checkpoints,
                  config=None, seed=0, log_fn=None):
    """Train the control branch against a frozen generator + RQ-VAE.

    Loss: masked-token cross entropy plus lambda_control times the control
    loss of the soft-decoded motion (probability-weighted base codes, ground
    truth residual codes). The frozen weights are checksum-verified.
    """
    cfg = config or ControlConfig()
    gen_ckpt = checkpoints.generator
    rq_ckpt = checkpoints.rqvae
    base, residual = gen_ckpt.base, gen_ckpt.residual
    rq_model = rq_ckpt.model
    seed_everything(seed)

    checksum_before = frozen_checksum(gen_ckpt, rq_ckpt)
    for module in (base, residual, rq_model):
        module.eval()
        for p in module.parameters():
            p.requires_grad_(False)

    branch = ControlBranch(base, rq_ckpt.config.downsample, cfg)
    branch.train()
    opt = torch.optim.Adam(branch.parameters(), lr=cfg.lr)

    conds = [condition_tokens_from_annotation(a, checkpoints.alignment)
             for a in annotations]
    cond_by_level = {
        lv: torch.from_numpy(np.stack([c.tokens_for(lv) for c in conds]))
        for lv in LEVEL_SEQUENCE
    }
    r = rq_ckpt.config.downsample
    n = len(grids)
    tq_each = [g.tokens.shape[0] for g in grids]
    tq_max = max(tq_each)
    tokens_np = np.zeros((n, tq_max), dtype=np.int64)
    residual_np = np.zeros((n, tq_max, gen_ckpt.num_quant_layers), dtype=np.int64)
    valid_np = np.zeros((n, tq_max), dtype=bool)
    for i, g in enumerate(grids):
        tq = g.tokens.shape[0]
        tokens_np[i, :tq] = g.tokens[:, 0]
        residual_np[i, :tq] = g.tokens
        valid_np[i, :tq] = True
    tokens_np[~valid_np] = base.pad_id
    base_tokens = torch.from_numpy(tokens_np)
    token_pad = torch.from_numpy(~valid_np)

    pad_frames = tq_max * r
    planes = torch.from_numpy(np.stack(
        [constraint_planes(c, pad_frames)[:pad_frames] for c in constraints]))

    # residual layers stay fixed at their ground-truth codes during control
    # training; only the base layer is predicted softly
    residual_idx = torch.from_numpy(residual_np)
    codes = rq_model.codebooks.codes
    hard_rest = torch.zeros(n, tq_max, codes.shape[-1], dtype=codes.dtype)
    for q in range(1, gen_ckpt.num_quant_layers):
        hard_rest = hard_rest + codes[q][residual_idx[..., q]]
    hard_rest = hard_rest.detach()

    target_feats = [torch.from_numpy(m.features.astype(np.float64))
                    for m in target_motions]
    rng = np.random.default_rng(seed)

    for step in range(cfg.steps):
        level = LEVEL_SEQUENCE[int(rng.integers(3))]
        masked = base_tokens.clone()
        target_tok = torch.full_like(base_tokens, -100)
        for i in range(n):
            pos = np.where(valid_np[i])[0]
            frac = mask_schedule(float(rng.random()))
            k = min(max(1, int(math.ceil(frac * len(pos)))), len(pos))
            sel = rng.choice(pos, size=k, replace=False)
            masked[i, sel] = base.mask_id
            target_tok[i, sel] = base_tokens[i, sel]

        ctrl_tokens = branch.spatial(planes)
        logits = controlled_logits(base, branch, masked, cond_by_level[level],
                                   ctrl_tokens, token_pad=token_pad)
        ce = F.cross_entropy(logits.reshape(-1, gen_ckpt.codebook_size),
                             target_tok.reshape(-1), ignore_index=-100)

        probs = torch.softmax(logits, dim=-1)
        soft_base = probs.to(codes.dtype) @ codes[0]
        latent = soft_base + hard_rest
        decoded = rq_model.decode_latent(latent)

        ctrl_losses = []
        for i, c in enumerate(constraints):
            feats_i = decoded[i, : c.frames].to(torch.float64)
            ctrl_losses.append(control_loss_torch(feats_i, target_feats[i], c.mask))
        loss = ce + cfg.lambda_control * torch.stack(ctrl_losses).mean()
        if not torch.isfinite(loss):
            raise TrainingDiverged("control loss is non-finite", epoch=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_fn is not None and (step % 100 == 0 or step == cfg.steps - 1):
            log_fn(f"epoch={step} loss={float(loss.detach()):.6f}")

    checksum_after = frozen_checksum(gen_ckpt, rq_ckpt)
    if checksum_after != checksum_before:
        raise FrozenWeightMutation("frozen generator/RQ-VAE weights changed during "
                                   "control training")
    branch.eval()
    return ControlCheckpoint(branch=branch, config=cfg,
                             frozen_checksum=checksum_before)


def constraint_errors(motion, constraint, skeleton=DEFAULT_SKELETON):
    """Distances (meters) between R(motion) and the targets at active entries."""
    world = local_to_global(motion, skeleton)
    if world.shape[0] != constraint.frames:
        raise ValueError("constraint/motion length mismatch")
    diff = world - constraint.targets
    return np.linalg.norm(diff[constraint.mask], axis=-1)


def controlled_generate(text, constraint, checkpoints, seed=0, reasoner=None,
                        config=None, level="gji", length=None):
    """Coarse-to-fine generation with spatial guidance from a trajectory constraint."""
    from .generation.masked import GenerationResult

    if length is not None and length != constraint.frames:
        raise ValueError(
            f"requested length {length} != constraint frames {constraint.frames}")
    gen_ckpt = checkpoints.generator
    ctrl_ckpt = checkpoints.control
    cfg = config or gen_ckpt.config
    reasoner = reasoner or TemplateReasonerStub()
    cond, annotation = condition_tokens_from_text(text, reasoner,
                                                  checkpoints.alignment)
    r = checkpoints.rqvae.config.downsample
    length = constraint.frames
    tq = math.ceil(length / r)
    ctrl_tokens = torch.from_numpy(encode_trajectory(constraint, ctrl_ckpt)[None])
    branch = ctrl_ckpt.branch

    def logits_fn(tokens_t, cond_np):
        cond_t = None if cond_np is None else torch.from_numpy(cond_np[None])
        return guided_controlled_logits(gen_ckpt.base, branch, tokens_t, cond_t,
                                        ctrl_tokens, cfg.guidance_scale)

    base_row = np.zeros(tq, dtype=np.int64)
    edit = np.ones(tq, dtype=bool)
    tokens, _ = coarse_to_fine_fill(gen_ckpt, base_row, edit, cond, seed, level,
                                    cfg, logits_fn=logits_fn)
    full = predict_residual_layers(gen_ckpt, tokens, cond, level)
    grid = MotionTokenGrid(full, downsample=r, frames=length)
    motion = rqvae_decode(grid, checkpoints.rqvae)

    errors = constraint_errors(motion, constraint) if constraint.active_count else \
        np.zeros(0)
    metadata = {
        "level_used": cond.best_level(level),
        "reasoner_fallback": annotation is None,
        "seed": seed,
        "global_text": text,
        "constraint_active": constraint.active_count,
        "constraint_avg_err": float(errors.mean()) if errors.size else 0.0,
        "constraint_max_err": float(errors.max()) if errors.size else 0.0,
    }
    return GenerationResult(motion=motion, grid=grid, metadata=metadata)


def save_control_checkpoint(path, checkpoint):
    digest = section_digest("control", checkpoint.config)
    arrays = {f"branch.{k}": v for k, v in checkpoint.branch.state_dict().items()}
    save_blobs(path, COMPONENT, digest, arrays)


def load_control_checkpoint(path, config, gen_checkpoint, downsample):
    digest = section_digest("control", config)
    _, _, arrays = load_blobs(path, expected_component=COMPONENT,
                              expected_digest=digest)
    branch = ControlBranch(gen_checkpoint.base, downsample, config)
    stripped = {k[len("branch."):]: v for k, v in arrays.items()}
    branch.load_state_dict(blobs_to_state_dict(stripped, branch.state_dict()))
    branch.eval()
    return ControlCheckpoint(branch=branch, config=config, frozen_checksum="")
