"""Weight-shared masked motion generator: training, coarse-to-fine decoding, editing.

One bidirectional transformer serves all three conditioning levels (G, G+J,
G+J+I); training samples a level per step. Decoding is confidence-based
mask-predict: stage 1 fills everything under level G, later stages remask the
lowest-confidence fraction and re-predict under richer conditioning. A second,
smaller transformer predicts the residual codebook layers from the base layer.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..checkpoint import blobs_to_state_dict, load_blobs, save_blobs
from ..config import GeneratorConfig, section_digest
from ..errors import TrainingDiverged
from ..seeding import seed_everything
from .conditioning import (ConditionTokens, condition_tokens_from_annotation,
                           condition_tokens_from_text)
from .rqvae import MotionTokenGrid, rqvae_decode

COMPONENT = "gen"
_COND_MAX = 32


def mask_schedule(t):
    """Cosine masking schedule: fraction of tokens masked at progress t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"schedule argument must lie in [0, 1], got {t}")
    return math.cos(math.pi * t / 2.0)


class Block(nn.Module):
    """Pre-norm bidirectional transformer block."""

    def __init__(self, dim, heads):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(),
                                 nn.Linear(4 * dim, dim))

    def forward(self, x, key_padding_mask=None):
        h = self.ln1(x)
        attn, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask,
                            need_weights=False)
        x = x + attn
        return x + self.mlp(self.ln2(x))


def _positions(length, dim):
    pos = torch.arange(length, dtype=torch.float32)[:, None]
    i = torch.arange(dim // 2, dtype=torch.float32)[None, :]
    angles = pos / torch.pow(10000.0, 2 * i / dim)
    out = torch.zeros(length, dim)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles)
    return out


class MaskedTransformer(nn.Module):
    """Base-layer token predictor over [condition tokens; motion tokens]."""

    def __init__(self, cfg, codebook_size, cond_dim, max_positions=256):
        super().__init__()
        self.cfg = cfg
        self.codebook_size = codebook_size
        self.mask_id = codebook_size
        self.pad_id = codebook_size + 1
        d = cfg.d_model
        self.token_emb = nn.Embedding(codebook_size + 2, d)
        # raw text features share a dominant direction; the norm recenters
        # them so conditioning differences survive the projection
        self.cond_proj = nn.Sequential(nn.Linear(cond_dim, d), nn.LayerNorm(d))
        self.cond_pos = nn.Parameter(torch.randn(_COND_MAX, d) * 0.02)
        self.null_cond = nn.Parameter(torch.zeros(1, d))
        self.register_buffer("pos", _positions(max_positions, d), persistent=False)
        self.blocks = nn.ModuleList(Block(d, cfg.heads) for _ in range(cfg.depth))
        self.head = nn.Sequential(nn.LayerNorm(d), nn.Linear(d, codebook_size))

    def embed_inputs(self, tokens, cond=None, drop=None):
        """tokens (B, Tq) int64, cond (B, Lc, cond_dim) or None -> (x, cond_len)."""
        b, tq = tokens.shape
        tok = self.token_emb(tokens) + self.pos[:tq][None]
        if cond is None:
            cond_emb = self.null_cond[None].expand(b, 1, -1)
        else:
            cond_emb = self.cond_proj(cond) + self.cond_pos[: cond.shape[1]][None]
            if drop is not None and drop.any():
                null = self.null_cond.expand(cond_emb.shape[1], -1)
                cond_emb = torch.where(drop[:, None, None], null[None], cond_emb)
        return torch.cat([cond_emb, tok], dim=1), cond_emb.shape[1]

    def full_pad_mask(self, token_pad, cond_len):
        if token_pad is None:
            return None
        b = token_pad.shape[0]
        front = torch.zeros(b, cond_len, dtype=torch.bool)
        return torch.cat([front, token_pad], dim=1)

    def logits(self, tokens, cond=None, drop=None, token_pad=None):
        x, cond_len = self.embed_inputs(tokens, cond, drop)
        pad = self.full_pad_mask(token_pad, cond_len)
        for blk in self.blocks:
            x = blk(x, key_padding_mask=pad)
        return self.head(x[:, cond_len:])


class ResidualTransformer(nn.Module):
    """Predicts codebook layer q from the summed embeddings of layers < q."""

    def __init__(self, cfg, num_layers, codebook_size, cond_dim, max_positions=256):
        super().__init__()
        if num_layers < 2:
            raise ValueError("residual head needs at least 2 quantizer layers")
        d = cfg.d_model
        self.codebook_size = codebook_size
        self.num_layers = num_layers
        self.code_emb = nn.Embedding(codebook_size, d)
        self.layer_emb = nn.Embedding(num_layers - 1, d)
        self.cond_proj = nn.Sequential(nn.Linear(cond_dim, d), nn.LayerNorm(d))
        self.cond_pos = nn.Parameter(torch.randn(_COND_MAX, d) * 0.02)
        self.null_cond = nn.Parameter(torch.zeros(1, d))
        self.register_buffer("pos", _positions(max_positions, d), persistent=False)
        self.blocks = nn.ModuleList(Block(d, cfg.heads) for _ in range(max(1, cfg.depth - 1)))
        self.head = nn.Sequential(nn.LayerNorm(d), nn.Linear(d, codebook_size))

    def logits(self, prev_layers, target_layer, cond=None, drop=None, token_pad=None):
        """prev_layers (B, Tq, q) indices of layers < target_layer."""
        b, tq, _ = prev_layers.shape
        x = self.code_emb(prev_layers).sum(dim=2) + self.pos[:tq][None]
        x = x + self.layer_emb.weight[target_layer - 1][None, None]
        if cond is None:
            cond_emb = self.null_cond[None].expand(b, 1, -1)
        else:
            cond_emb = self.cond_proj(cond) + self.cond_pos[: cond.shape[1]][None]
            if drop is not None and drop.any():
                null = self.null_cond.expand(cond_emb.shape[1], -1)
                cond_emb = torch.where(drop[:, None, None], null[None], cond_emb)
        x = torch.cat([cond_emb, x], dim=1)
        cond_len = cond_emb.shape[1]
        pad = None
        if token_pad is not None:
            front = torch.zeros(b, cond_len, dtype=torch.bool)
            pad = torch.cat([front, token_pad], dim=1)
        for blk in self.blocks:
            x = blk(x, key_padding_mask=pad)
        return self.head(x[:, cond_len:])


@dataclass
class GeneratorCheckpoint:
    base: MaskedTransformer
    residual: ResidualTransformer
    config: GeneratorConfig
    codebook_size: int
    num_quant_layers: int
    cond_dim: int


def guided_logits(model, tokens, cond, scale, token_pad=None):
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    uncond = model.logits(tokens, None, token_pad=token_pad)
    if scale == 0.0:
        return uncond
    conditional = model.logits(tokens, cond, token_pad=token_pad)
    return uncond + scale * (conditional - uncond)


LEVEL_SEQUENCE = ("g", "gj", "gji")


def _pad_grids(grids, pad_id):
    n = len(grids)
    tq_max = max(g.tokens.shape[0] for g in grids)
    q = grids[0].tokens.shape[1]
    tokens = np.full((n, tq_max, q), pad_id, dtype=np.int64)
    valid = np.zeros((n, tq_max), dtype=bool)
    for i, g in enumerate(grids):
        tq = g.tokens.shape[0]
        tokens[i, :tq] = g.tokens
        valid[i, :tq] = True
    return tokens, valid


def train_generator(grids, annotations, align_checkpoint, config=None,
                    codebook_size=64, seed=0, log_fn=None):
    """Train base + residual transformers on a tokenized corpus.

    Per step: one conditioning level sampled uniformly, a cosine-scheduled
    fraction of base tokens masked, cross entropy on the masked positions;
    10% of samples drop their condition for classifier-free guidance.
    """
    if len(grids) != len(annotations) or not grids:
        raise ValueError("need matching nonempty grids and annotations")
    cfg = config or GeneratorConfig()
    seed_everything(seed)
    num_quant = grids[0].tokens.shape[1]

    conds = [condition_tokens_from_annotation(a, align_checkpoint) for a in annotations]
    cond_dim = conds[0].global_tokens.shape[1]
    cond_by_level = {
        lv: torch.from_numpy(np.stack([c.tokens_for(lv) for c in conds]))
        for lv in LEVEL_SEQUENCE
    }

    base = MaskedTransformer(cfg, codebook_size, cond_dim)
    residual = ResidualTransformer(cfg, num_quant, codebook_size, cond_dim)
    tokens_np, valid_np = _pad_grids(grids, pad_id=0)
    tokens_np[~valid_np] = base.pad_id
    base_tokens = torch.from_numpy(tokens_np[..., 0])
    all_layers = torch.from_numpy(tokens_np)
    valid = torch.from_numpy(valid_np)
    token_pad = ~valid
    n, tq_max = base_tokens.shape
    rng = np.random.default_rng(seed)

    base.train()
    opt = torch.optim.Adam(base.parameters(), lr=cfg.lr)
    for step in range(cfg.steps):
        level = LEVEL_SEQUENCE[int(rng.integers(3))]
        masked = base_tokens.clone()
        target = torch.full_like(base_tokens, -100)
        for i in range(n):
            pos = np.where(valid_np[i])[0]
            # text-only synthesis starts from a fully masked grid, so that
            # regime gets explicit training mass beyond the cosine schedule
            if rng.random() < cfg.full_mask_prob:
                frac = 1.0
            else:
                frac = mask_schedule(float(rng.random()))
            k = max(1, int(math.ceil(frac * len(pos))))
            k = min(k, len(pos))
            sel = rng.choice(pos, size=k, replace=False)
            masked[i, sel] = base.mask_id
            target[i, sel] = base_tokens[i, sel]
        drop = torch.from_numpy(rng.random(n) < cfg.cond_dropout)
        logits = base.logits(masked, cond_by_level[level], drop, token_pad)
        loss = F.cross_entropy(logits.reshape(-1, codebook_size),
                               target.reshape(-1), ignore_index=-100)
        if not torch.isfinite(loss):
            raise TrainingDiverged("generator loss is non-finite", epoch=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_fn is not None and (step % 100 == 0 or step == cfg.steps - 1):
            log_fn(f"epoch={step} loss={float(loss.detach()):.6f}")

    residual.train()
    opt_r = torch.optim.Adam(residual.parameters(), lr=cfg.lr)
    for step in range(cfg.residual_steps):
        level = LEVEL_SEQUENCE[int(rng.integers(3))]
        q = int(rng.integers(1, num_quant))
        prev = all_layers[..., :q].clone()
        prev[~valid] = 0
        target = all_layers[..., q].clone()
        target[~valid] = -100
        drop = torch.from_numpy(rng.random(n) < cfg.cond_dropout)
        logits = residual.logits(prev, q, cond_by_level[level], drop, token_pad)
        loss = F.cross_entropy(logits.reshape(-1, codebook_size),
                               target.reshape(-1), ignore_index=-100)
        if not torch.isfinite(loss):
            raise TrainingDiverged("residual loss is non-finite", epoch=step)
        opt_r.zero_grad()
        loss.backward()
        opt_r.step()
        if log_fn is not None and (step % 100 == 0 or step == cfg.residual_steps - 1):
            log_fn(f"epoch={step} loss={float(loss.detach()):.6f}")

    base.eval()
    residual.eval()
    return GeneratorCheckpoint(base=base, residual=residual, config=cfg,
                               codebook_size=codebook_size,
                               num_quant_layers=num_quant, cond_dim=cond_dim)


def _iterative_fill(logits_fn, tokens, fill_mask, cond_arr, iters, cfg, gen,
                    confidences, mask_id):
    """Confidence-based mask-predict over the positions in fill_mask (in place)."""
    region = np.where(fill_mask)[0]
    if len(region) == 0:
        return
    still = fill_mask.copy()
    tokens[region] = mask_id
    r_total = len(region)
    for it in range(iters):
        t_tokens = torch.from_numpy(tokens[None])
        logits = logits_fn(t_tokens, cond_arr)[0]
        probs = torch.softmax(logits / cfg.sample_temperature, dim=-1)
        masked_idx = np.where(still)[0]
        sampled = torch.multinomial(probs[masked_idx], 1, generator=gen)[:, 0]
        conf = probs[masked_idx, sampled].numpy()
        tokens[masked_idx] = sampled.numpy()
        confidences[masked_idx] = conf
        if it == iters - 1:
            break
        n_next = int(math.ceil(mask_schedule((it + 1) / iters) * r_total))
        n_next = min(n_next, len(masked_idx))
        if n_next <= 0:
            break
        order = np.argsort(conf, kind="stable")
        remask = masked_idx[order[:n_next]]
        still[:] = False
        still[remask] = True
        tokens[remask] = mask_id


def coarse_to_fine_fill(gen_checkpoint, base_tokens, edit_mask, cond, seed,
                        level="gji", config=None, logits_fn=None):
    """Run the staged fill over the masked positions of a base-layer token row.

    Stage 1 fills the whole edit region under level G; stages 2 and 3 remask
    the lowest-confidence `remask_rho` fraction of the region and re-predict
    under G+J and G+J+I. Returns (tokens, confidences).
    """
    cfg = config or gen_checkpoint.config
    base = gen_checkpoint.base
    if logits_fn is None:
        def logits_fn(tokens_t, cond_np):
            cond_t = None if cond_np is None else torch.from_numpy(cond_np[None])
            return guided_logits(base, tokens_t, cond_t, cfg.guidance_scale)

    level = cond.best_level(level)
    stages = [("g", cfg.iters_stage1)]
    if level in ("gj", "gji"):
        stages.append(("gj", cfg.iters_stage2))
    if level == "gji":
        stages.append(("gji", cfg.iters_stage3))

    tokens = np.asarray(base_tokens, dtype=np.int64).copy()
    edit_mask = np.asarray(edit_mask, dtype=bool)
    confidences = np.full(tokens.shape[0], np.inf, dtype=np.float64)
    rng = torch.Generator().manual_seed(seed)

    region = np.where(edit_mask)[0]
    with torch.no_grad():
        first_level, first_iters = stages[0]
        _iterative_fill(logits_fn, tokens, edit_mask, cond.tokens_for(first_level),
                        first_iters, cfg, rng, confidences, base.mask_id)
        for stage_level, iters in stages[1:]:
            k = int(round(cfg.remask_rho * len(region)))
            if k <= 0:
                continue
            conf_region = confidences[region]
            order = np.argsort(conf_region, kind="stable")
            chosen = region[order[:k]]
            stage_mask = np.zeros_like(edit_mask)
            stage_mask[chosen] = True
            _iterative_fill(logits_fn, tokens, stage_mask, cond.tokens_for(stage_level),
                            iters, cfg, rng, confidences, base.mask_id)
    return tokens, confidences


def predict_residual_layers(gen_checkpoint, base_tokens, cond, level="gji"):
    """Greedy residual-layer prediction from the finished base layer."""
    residual = gen_checkpoint.residual
    level = cond.best_level(level)
    cond_t = torch.from_numpy(cond.tokens_for(level)[None])
    layers = [np.asarray(base_tokens, dtype=np.int64)]
    with torch.no_grad():
        for q in range(1, gen_checkpoint.num_quant_layers):
            prev = torch.from_numpy(np.stack(layers, axis=-1)[None])
            logits = residual.logits(prev, q, cond_t)[0]
            layers.append(logits.argmax(dim=-1).numpy())
    return np.stack(layers, axis=-1)


@dataclass
class GenerationResult:
    motion: object
    grid: MotionTokenGrid
    metadata: dict


def generate(global_text, reasoner, checkpoints, length, config=None, seed=0,
             level="gji"):
    """Coarse-to-fine text-to-motion generation.

    Reasoner failure drops conditioning to level G and flags it in metadata.
    Deterministic for a fixed seed.
    """
    if not global_text or not global_text.strip():
        raise ValueError("global text must be nonempty")
    gen_ckpt = checkpoints.generator
    cfg = config or gen_ckpt.config
    cond, annotation = condition_tokens_from_text(global_text, reasoner,
                                                  checkpoints.alignment)
    r = checkpoints.rqvae.config.downsample
    tq = math.ceil(length / r)
    base = np.zeros(tq, dtype=np.int64)
    edit = np.ones(tq, dtype=bool)
    tokens, _ = coarse_to_fine_fill(gen_ckpt, base, edit, cond, seed, level, cfg)
    full = predict_residual_layers(gen_ckpt, tokens, cond, level)
    grid = MotionTokenGrid(full, downsample=r, frames=length)
    motion = rqvae_decode(grid, checkpoints.rqvae)
    metadata = {
        "level_used": cond.best_level(level),
        "reasoner_fallback": annotation is None,
        "seed": seed,
        "global_text": global_text,
        "joint_texts": {} if annotation is None else
            {g.value: t for g, t in annotation.joint_texts.items()},
        "interaction_texts": {} if annotation is None else
            {f"{a.value},{b.value}": t
             for (a, b), t in annotation.interaction_texts.items()},
    }
    return GenerationResult(motion=motion, grid=grid, metadata=metadata)


def edit_infill(source, frame_mask, annotation, checkpoints, config=None, seed=0,
                level="gji"):
    """Re-predict the masked token columns; unmasked columns survive bit-exactly."""
    gen_ckpt = checkpoints.generator
    cfg = config or gen_ckpt.config
    frame_mask = np.asarray(frame_mask, dtype=bool)
    if frame_mask.shape[0] != source.tokens.shape[0]:
        raise ValueError(
            f"mask length {frame_mask.shape[0]} != token rows {source.tokens.shape[0]}")
    if not frame_mask.any():
        return source.copy()
    cond = condition_tokens_from_annotation(annotation, checkpoints.alignment)
    tokens, _ = coarse_to_fine_fill(gen_ckpt, source.tokens[:, 0], frame_mask,
                                    cond, seed, level, cfg)
    full = predict_residual_layers(gen_ckpt, tokens, cond, level)
    full[~frame_mask] = source.tokens[~frame_mask]
    return MotionTokenGrid(full, downsample=source.downsample, frames=source.frames)


def save_generator_checkpoint(path, checkpoint):
    digest = section_digest("generator", checkpoint.config)
    arrays = {f"base.{k}": v for k, v in checkpoint.base.state_dict().items()}
    arrays.update({f"residual.{k}": v
                   for k, v in checkpoint.residual.state_dict().items()})
    arrays["meta.codebook_size"] = np.array([checkpoint.codebook_size], dtype=np.float32)
    arrays["meta.num_quant_layers"] = np.array([checkpoint.num_quant_layers],
                                               dtype=np.float32)
    arrays["meta.cond_dim"] = np.array([checkpoint.cond_dim], dtype=np.float32)
    save_blobs(path, COMPONENT, digest, arrays)


def load_generator_checkpoint(path, config):
    digest = section_digest("generator", config)
    _, _, arrays = load_blobs(path, expected_component=COMPONENT,
                              expected_digest=digest)
    codebook_size = int(arrays.pop("meta.codebook_size")[0])
    num_quant = int(arrays.pop("meta.num_quant_layers")[0])
    cond_dim = int(arrays.pop("meta.cond_dim")[0])
    base = MaskedTransformer(config, codebook_size, cond_dim)
    residual = ResidualTransformer(config, num_quant, codebook_size, cond_dim)
    base_arrays = {k[len("base."):]: v for k, v in arrays.items() if k.startswith("base.")}
    res_arrays = {k[len("residual."):]: v for k, v in arrays.items()
                  if k.startswith("residual.")}
    base.load_state_dict(blobs_to_state_dict(base_arrays, base.state_dict()))
    residual.load_state_dict(blobs_to_state_dict(res_arrays, residual.state_dict()))
    base.eval()
    residual.eval()
    return GeneratorCheckpoint(base=base, residual=residual, config=config,
                               codebook_size=codebook_size,
                               num_quant_layers=num_quant, cond_dim=cond_dim)
