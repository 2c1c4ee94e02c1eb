"""Desk-scale text/motion encoders for hierarchical alignment.

The text side has three levels: the global caption, six joint-group texts,
and fifteen interaction texts. Joint and interaction token sets pull the
coarse semantics in through parameter-free cross attention before their level
encoders produce Gaussian latents; level means then accumulate progressively.
The motion side is a small variational transformer encoder/decoder over the
263-dim features. Dropout is zero everywhere: evaluation-mode determinism is
part of the module contract and overfitting is the desk-scale objective.
"""

import hashlib
import math

import numpy as np
import torch
import torch.nn as nn

from ..errors import InvalidLevel
from ..motion import FEATURE_DIM
from ..skeleton import ALL_PAIRS, GROUP_ORDER
from ..textembed import tokenize
from .ops import progressive_fuse

LEVELS = ("global", "joint", "interaction")

_PAD_ID = 0
_EMPTY_ID = 1


def hash_token_ids(text, vocab_size, max_tokens):
    """Stable token ids via sha256 bucketing (ids 0/1 reserved: pad/empty)."""
    toks = tokenize(text)[:max_tokens]
    if not toks:
        return [_EMPTY_ID]
    ids = []
    for tok in toks:
        digest = hashlib.sha256(tok.encode("utf-8")).digest()
        ids.append(2 + int.from_bytes(digest[:4], "little") % (vocab_size - 2))
    return ids


def sinusoidal_positions(length, dim):
    pos = torch.arange(length, dtype=torch.float32)[:, None]
    i = torch.arange(dim // 2, dtype=torch.float32)[None, :]
    angles = pos / torch.pow(10000.0, 2 * i / dim)
    out = torch.zeros(length, dim)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles)
    return out


def _encoder_stack(dim, heads, depth):
    layer = nn.TransformerEncoderLayer(
        d_model=dim, nhead=heads, dim_feedforward=4 * dim,
        dropout=0.0, batch_first=True, norm_first=True)
    return nn.TransformerEncoder(layer, num_layers=depth, enable_nested_tensor=False)


class TinyTextBackbone(nn.Module):
    """Trainable hashed-vocabulary token encoder: text -> (L, dim) features."""

    def __init__(self, vocab_size=512, dim=32, heads=4, max_tokens=16):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=_PAD_ID)
        self.register_buffer("pos", sinusoidal_positions(max_tokens, dim),
                             persistent=False)
        self.encoder = _encoder_stack(dim, heads, depth=1)

    def forward_ids(self, ids, pad_mask):
        # ids (B, L) int64, pad_mask (B, L) True where padded
        x = self.embedding(ids) + self.pos[: ids.shape[1]][None]
        return self.encoder(x, src_key_padding_mask=pad_mask)

    def encode(self, text):
        ids = torch.tensor([hash_token_ids(text, self.vocab_size, self.max_tokens)])
        pad = torch.zeros_like(ids, dtype=torch.bool)
        return self.forward_ids(ids, pad)[0]

    def encode_batch(self, texts):
        """Pad-and-stack texts -> (B, L, dim) features plus (B, L) pad mask."""
        id_lists = [hash_token_ids(t, self.vocab_size, self.max_tokens) for t in texts]
        length = max(len(ids) for ids in id_lists)
        ids = torch.full((len(texts), length), _PAD_ID, dtype=torch.int64)
        pad = torch.ones((len(texts), length), dtype=torch.bool)
        for i, lst in enumerate(id_lists):
            ids[i, : len(lst)] = torch.tensor(lst)
            pad[i, : len(lst)] = False
        return self.forward_ids(ids, pad), pad


def masked_mean(x, pad_mask):
    keep = (~pad_mask).float()[..., None]
    return (x * keep).sum(dim=-2) / keep.sum(dim=-2).clamp(min=1.0)


def batched_cross_attention(z_low, z_coarse, coarse_pad=None):
    """Batched form of the fusion op: (B, n, d) x (B, m, d) -> (B, n, d)."""
    d_k = z_low.shape[-1]
    logits = z_low @ z_coarse.transpose(-1, -2) / math.sqrt(d_k)
    if coarse_pad is not None:
        logits = logits.masked_fill(coarse_pad[:, None, :], float("-inf"))
    return torch.softmax(logits, dim=-1) @ z_coarse


class DistributionEncoder(nn.Module):
    """Transformer encoder with learned mu/sigma tokens -> Gaussian latent."""

    def __init__(self, dim, heads, depth):
        super().__init__()
        self.dist_tokens = nn.Parameter(torch.randn(2, dim) * 0.02)
        self.encoder = _encoder_stack(dim, heads, depth)

    def forward(self, tokens, pad_mask=None):
        b = tokens.shape[0]
        dist = self.dist_tokens[None].expand(b, -1, -1)
        x = torch.cat([dist, tokens], dim=1)
        if pad_mask is not None:
            pad_mask = torch.cat(
                [torch.zeros(b, 2, dtype=torch.bool, device=tokens.device), pad_mask], dim=1)
        out = self.encoder(x, src_key_padding_mask=pad_mask)
        mu = out[:, 0]
        sigma = nn.functional.softplus(out[:, 1]) + 1e-4
        return mu, sigma


class MotionEncoder(nn.Module):
    def __init__(self, dim, heads, depth, max_frames=512):
        super().__init__()
        self.input_proj = nn.Linear(FEATURE_DIM, dim)
        self.register_buffer("pos", sinusoidal_positions(max_frames, dim),
                             persistent=False)
        self.dist = DistributionEncoder(dim, heads, depth)

    def forward(self, feats, pad_mask=None):
        # feats (B, T, 263)
        x = self.input_proj(feats) + self.pos[: feats.shape[1]][None]
        return self.dist(x, pad_mask)


class MotionDecoder(nn.Module):
    """Latent -> (T, 263) features via cross-attention onto frame queries."""

    def __init__(self, dim, heads, depth, max_frames=512):
        super().__init__()
        layer = nn.TransformerDecoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=4 * dim,
            dropout=0.0, batch_first=True, norm_first=True)
        self.decoder = nn.TransformerDecoder(layer, num_layers=depth)
        self.register_buffer("pos", sinusoidal_positions(max_frames, dim),
                             persistent=False)
        self.output_proj = nn.Linear(dim, FEATURE_DIM)

    def forward(self, z, frames):
        # z (B, dim) -> (B, frames, 263)
        queries = self.pos[:frames][None].expand(z.shape[0], -1, -1)
        out = self.decoder(queries, memory=z[:, None, :])
        return self.output_proj(out)


class AlignmentModel(nn.Module):
    """Three-level text encoders + motion VAE + progressive latent fusion."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.backbone = TinyTextBackbone(cfg.vocab_size, d, cfg.heads, cfg.max_tokens)
        self.global_encoder = DistributionEncoder(d, cfg.heads, cfg.depth)
        self.joint_encoder = DistributionEncoder(d, cfg.heads, cfg.depth)
        self.inter_encoder = DistributionEncoder(d, cfg.heads, cfg.depth)
        self.motion_encoder = MotionEncoder(d, cfg.heads, cfg.depth)
        self.motion_decoder = MotionDecoder(d, cfg.heads, cfg.depth)
        self.gamma_joint = nn.Parameter(torch.zeros(()))
        self.gamma_inter = nn.Parameter(torch.zeros(()))

    # -- text side --

    def _level_token_sets(self, annotations):
        """Token features per level for a batch of annotations."""
        global_feats, global_pad = self.backbone.encode_batch(
            [a.global_texts[0] for a in annotations])

        joint_texts = [a.joint_texts[g] for a in annotations for g in GROUP_ORDER]
        jf, jp = self.backbone.encode_batch(joint_texts)
        joint_tokens = masked_mean(jf, jp).reshape(len(annotations), len(GROUP_ORDER), -1)

        inter_texts = [a.interaction_texts[p] for a in annotations for p in ALL_PAIRS]
        itf, itp = self.backbone.encode_batch(inter_texts)
        inter_tokens = masked_mean(itf, itp).reshape(len(annotations), len(ALL_PAIRS), -1)
        return global_feats, global_pad, joint_tokens, inter_tokens

    def encode_text_levels(self, annotations):
        """(mu, sigma) per level for a batch of annotations."""
        global_feats, global_pad, joint_tokens, inter_tokens = \
            self._level_token_sets(annotations)
        mu_c, sd_c = self.global_encoder(global_feats, global_pad)
        joint_fused = joint_tokens + batched_cross_attention(
            joint_tokens, global_feats, global_pad)
        mu_j, sd_j = self.joint_encoder(joint_fused)
        inter_fused = inter_tokens + batched_cross_attention(
            inter_tokens, global_feats, global_pad)
        mu_i, sd_i = self.inter_encoder(inter_fused)
        return {"global": (mu_c, sd_c), "joint": (mu_j, sd_j),
                "interaction": (mu_i, sd_i)}

    def fused_text_latents(self, annotations):
        dists = self.encode_text_levels(annotations)
        z_g, z_j, z_i = progressive_fuse(
            dists["global"], dists["joint"], dists["interaction"],
            gamma_joint=self.gamma_joint, gamma_inter=self.gamma_inter)
        return {"global": z_g, "joint": z_j, "interaction": z_i}, dists

    # -- motion side --

    def encode_motion_batch(self, feats, pad_mask=None):
        return self.motion_encoder(feats, pad_mask)

    def decode_motion(self, z, frames):
        return self.motion_decoder(z, frames)

    # -- inference embeddings (means only, no sampling) --

    @torch.no_grad()
    def embed_text(self, annotation, level):
        if level not in LEVELS:
            raise InvalidLevel(f"level must be one of {LEVELS}, got {level!r}")
        self.eval()
        latents, _ = self.fused_text_latents([annotation])
        return latents[level][0].numpy().astype(np.float64)

    @torch.no_grad()
    def embed_motion(self, motion):
        self.eval()
        feats = torch.from_numpy(motion.features[None].astype(np.float32))
        mu, _ = self.encode_motion_batch(feats)
        return mu[0].numpy().astype(np.float64)
