"""Alignment training loop, checkpointing, and inference embeddings."""

from dataclasses import dataclass, field

import numpy as np
import torch

from ..checkpoint import blobs_to_state_dict, load_blobs, save_blobs, state_dict_to_blobs
from ..config import AlignmentConfig, section_digest
from ..errors import TrainingDiverged
from ..seeding import seed_everything
from ..textembed import text_similarity_matrix
from .models import LEVELS, AlignmentModel
from .ops import (embedding_similarity_loss, infonce, kl_regularizers,
                  reconstruction_loss, similarity_matrix)

COMPONENT = "align"


@dataclass
class AlignmentCheckpoint:
    model: AlignmentModel
    config: AlignmentConfig
    train_log: list = field(default_factory=list)

    def embed_text(self, annotation, level):
        return self.model.embed_text(annotation, level)

    def embed_motion(self, motion):
        return self.model.embed_motion(motion)


def _pad_motion_batch(motions):
    t_max = max(m.frames for m in motions)
    feats = torch.zeros(len(motions), t_max, motions[0].features.shape[1])
    pad = torch.ones(len(motions), t_max, dtype=torch.bool)
    for i, m in enumerate(motions):
        feats[i, : m.frames] = torch.from_numpy(m.features.astype(np.float32))
        pad[i, : m.frames] = False
    return feats, pad


def negative_filter_mask(annotations, threshold, embed_dim=64):
    """True where two samples' global captions are near-duplicates."""
    sims = text_similarity_matrix([a.global_texts[0] for a in annotations],
                                  dim=embed_dim)
    return sims >= threshold


def train_alignment(corpus, config=None, seed=0, log_fn=None):
    """Fit the hierarchical alignment model on (motion, annotation) pairs.

    Deterministic under a fixed seed: fixed batch order, single-threaded math,
    reparameterization noise from the seeded global torch RNG.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    cfg = config or AlignmentConfig()
    seed_everything(seed)

    motions = [m for m, _ in corpus]
    annotations = [a for _, a in corpus]
    model = AlignmentModel(cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    feats, pad = _pad_motion_batch(motions)
    valid = (~pad).float()[..., None]
    neg_filter = torch.from_numpy(
        negative_filter_mask(annotations, cfg.negative_filter_threshold))

    n = len(corpus)
    batch = n if cfg.batch_size in (0, None) or cfg.batch_size > n else cfg.batch_size
    order_rng = np.random.default_rng(seed)
    log = []

    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n - batch + 1, batch):
            idx = perm[start:start + batch]
            idx_t = torch.from_numpy(idx)
            ann_b = [annotations[i] for i in idx]
            feats_b, pad_b, valid_b = feats[idx_t], pad[idx_t], valid[idx_t]

            mu_m, sd_m = model.encode_motion_batch(feats_b, pad_b)
            z_m = mu_m + sd_m * torch.randn_like(sd_m)
            text_latents, text_dists = model.fused_text_latents(ann_b)

            filt = neg_filter[idx_t][:, idx_t]
            l_nce = sum(infonce(similarity_matrix(text_latents[lv], mu_m),
                                cfg.temperature, filt) for lv in LEVELS)
            l_kl = sum(kl_regularizers(text_dists[lv], (mu_m, sd_m)) for lv in LEVELS)
            l_emb = sum(embedding_similarity_loss(text_latents[lv], mu_m)
                        for lv in LEVELS)

            dec_m = model.decode_motion(z_m, feats_b.shape[1]) * valid_b
            dec_t = model.decode_motion(text_latents["interaction"],
                                        feats_b.shape[1]) * valid_b
            target = feats_b * valid_b
            l_rec = reconstruction_loss(dec_m, target) + reconstruction_loss(dec_t, target)

            loss = (cfg.lambda_r * l_rec + cfg.lambda_nce * l_nce
                    + cfg.lambda_kl * l_kl + cfg.lambda_e * l_emb)
            if not torch.isfinite(loss):
                raise TrainingDiverged("alignment loss is non-finite", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())

        entry = {"epoch": epoch, "loss": epoch_loss,
                 "recon": float(l_rec.detach()), "nce": float(l_nce.detach())}
        log.append(entry)
        if log_fn is not None:
            log_fn(f"epoch={epoch} loss={epoch_loss:.6f}")

    model.eval()
    return AlignmentCheckpoint(model=model, config=cfg, train_log=log)


def embed_text(annotation, level, checkpoint):
    return checkpoint.embed_text(annotation, level)


def embed_motion(motion, checkpoint):
    return checkpoint.embed_motion(motion)


def save_alignment_checkpoint(path, checkpoint):
    digest = section_digest("alignment", checkpoint.config)
    save_blobs(path, COMPONENT, digest, state_dict_to_blobs(checkpoint.model.state_dict()))


def load_alignment_checkpoint(path, config):
    digest = section_digest("alignment", config)
    _, _, arrays = load_blobs(path, expected_component=COMPONENT,
                              expected_digest=digest)
    model = AlignmentModel(config)
    model.load_state_dict(blobs_to_state_dict(arrays, model.state_dict()))
    model.eval()
    return AlignmentCheckpoint(model=model, config=config)
