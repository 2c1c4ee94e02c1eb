"""Residual-quantized motion tokenizer (conv encoder/decoder + codebook stack)."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..checkpoint import blobs_to_state_dict, load_blobs, save_blobs, state_dict_to_blobs
from ..config import RqvaeConfig, section_digest
from ..errors import NotFitted, TrainingDiverged
from ..motion import FEATURE_DIM, MotionSequence
from ..seeding import seed_everything

COMPONENT = "rqvae"


@dataclass
class MotionTokenGrid:
    """T' x Q residual token indices for one motion."""

    tokens: np.ndarray      # (T', Q) int64, values in [0, K)
    downsample: int
    frames: int             # original frame count (decode crops to this)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        expect = math.ceil(self.frames / self.downsample)
        if self.tokens.shape[0] != expect:
            raise ValueError(
                f"token rows {self.tokens.shape[0]} != ceil(T/r) = {expect}")

    @property
    def num_layers(self):
        return self.tokens.shape[1]

    def copy(self):
        return MotionTokenGrid(self.tokens.copy(), self.downsample, self.frames)


class ResidualCodebooks(nn.Module):
    """Stack of Q codebooks; layer q quantizes the residual left by layers < q."""

    def __init__(self, num_layers, codebook_size, code_dim, residual_gate=0.1):
        super().__init__()
        self.num_layers = num_layers
        self.codebook_size = codebook_size
        self.code_dim = code_dim
        self.residual_gate = residual_gate
        self.codes = nn.Parameter(torch.randn(num_layers, codebook_size, code_dim) * 0.5)
        self.pin_zero_codes()
        self._dedupe()

    @torch.no_grad()
    def pin_zero_codes(self):
        """Code 0 of every residual layer is the exact zero vector.

        Nearest-code selection can then never grow the residual, and when a
        deep layer picks the zero code the partial sums (hence decodes) tie
        exactly, which keeps per-depth reconstruction error non-increasing.
        """
        for q in range(1, self.num_layers):
            self.codes[q, 0] = 0.0

    @torch.no_grad()
    def _dedupe(self):
        # duplicate codes within a layer would make argmin ties load-bearing
        for q in range(self.num_layers):
            layer = self.codes[q]
            for _ in range(8):
                dists = torch.cdist(layer, layer) + torch.eye(layer.shape[0]) * 1e9
                dup = dists.min() < 1e-8
                if not dup:
                    break
                jitter = torch.randn_like(layer) * 1e-4
                if q >= 1:
                    jitter[0] = 0.0
                layer += jitter

    def _select(self, residual, q):
        """Nearest code of layer q, gated on layers >= 1.

        A residual layer's code is accepted only when it shrinks the residual
        by at least `residual_gate` relatively; otherwise the pinned zero code
        wins and that layer contributes exactly nothing at that position.
        """
        flat = residual.reshape(-1, self.code_dim)
        dists = torch.cdist(flat, self.codes[q])
        idx = dists.argmin(dim=-1)
        if q >= 1:
            best = dists.gather(1, idx[:, None])[:, 0]
            norm = flat.norm(dim=-1)
            idx = torch.where(best <= (1.0 - self.residual_gate) * norm, idx,
                              torch.zeros_like(idx))
        return idx.reshape(residual.shape[:-1])

    def quantize(self, z, num_layers=None):
        """z (..., D) -> (indices (..., Q'), quantized sum (..., D))."""
        q_layers = self.num_layers if num_layers is None else num_layers
        residual = z
        total = torch.zeros_like(z)
        indices = []
        for q in range(q_layers):
            idx = self._select(residual, q)
            chosen = self.codes[q][idx]
            indices.append(idx)
            total = total + chosen
            residual = residual - chosen
        return torch.stack(indices, dim=-1), total

    def quantize_train(self, z):
        """Per-depth partial quantized sums plus codebook loss.

        Returns (partials, vq_loss) where partials[q] is the sum of the first
        q+1 layers' codes (codes detached from the straight-through path; the
        codebook learns only through vq_loss).
        """
        residual = z
        total = torch.zeros_like(z)
        partials = []
        vq_loss = z.new_zeros(())
        for q in range(self.num_layers):
            idx = self._select(residual.detach(), q)
            chosen = self.codes[q][idx]
            vq_loss = vq_loss + F.mse_loss(chosen, residual.detach())
            total = total + chosen.detach()
            partials.append(total)
            residual = residual - chosen.detach()
        return partials, vq_loss

    def lookup(self, indices, num_layers=None):
        """indices (..., Q') -> summed code vectors (..., D)."""
        q_layers = indices.shape[-1] if num_layers is None else num_layers
        out = 0
        for q in range(q_layers):
            out = out + self.codes[q][indices[..., q]]
        return out

    @torch.no_grad()
    def init_from_data(self, z_flat, rng, iters=10):
        """Seed each layer's codes with k-means over the residuals so far.

        Random codebook init sits far from trained latents; the commitment
        pull then contracts every latent onto a few arbitrary codes and wipes
        out the temporal structure. Data-dependent init keeps residuals small
        from the first quantized step.
        """
        residual = z_flat.detach().clone()
        n = residual.shape[0]
        for q in range(self.num_layers):
            k = min(self.codebook_size, n)
            pick = torch.from_numpy(rng.choice(n, size=k, replace=False))
            centers = residual[pick].clone()
            for _ in range(iters):
                assign = torch.cdist(residual, centers).argmin(dim=-1)
                for c in range(k):
                    members = residual[assign == c]
                    if members.shape[0] > 0:
                        centers[c] = members.mean(dim=0)
            self.codes[q, :k] = centers
            if k < self.codebook_size:
                jitter = torch.from_numpy(
                    rng.normal(scale=1e-3, size=(self.codebook_size - k,
                                                 self.code_dim))).float()
                self.codes[q, k:] = centers[
                    torch.from_numpy(rng.integers(0, k, self.codebook_size - k))] + jitter
            self.pin_zero_codes()
            self._dedupe()
            assign = torch.cdist(residual, self.codes[q]).argmin(dim=-1)
            residual = residual - self.codes[q][assign]


def _res_block(width):
    return nn.Sequential(
        nn.Conv1d(width, width, 3, padding=1), nn.GELU(),
        nn.Conv1d(width, width, 1))


class RqvaeModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        if cfg.downsample & (cfg.downsample - 1):
            raise ValueError("downsample must be a power of two")
        stages = int(math.log2(cfg.downsample))
        self.cfg = cfg
        w = cfg.width

        enc = [nn.Conv1d(FEATURE_DIM, w, 3, padding=1), nn.GELU()]
        for _ in range(stages):
            enc += [nn.Conv1d(w, w, 4, stride=2, padding=1), nn.GELU(), _res_block(w), nn.GELU()]
        enc += [nn.Conv1d(w, cfg.code_dim, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)

        # the decoder stays temporally local (small receptive field); with a
        # wide receptive field it can reconstruct desk-scale sequences from a
        # constant latent by reading conv boundary offsets, and the encoder
        # then collapses time out of the latents entirely
        dec = [nn.Conv1d(cfg.code_dim, w, 1), nn.GELU()]
        for _ in range(stages):
            dec += [nn.ConvTranspose1d(w, w, 2, stride=2), nn.GELU(),
                    nn.Conv1d(w, w, 3, padding=1), nn.GELU()]
        dec += [nn.Conv1d(w, FEATURE_DIM, 1)]
        self.decoder = nn.Sequential(*dec)

        self.codebooks = ResidualCodebooks(cfg.num_layers, cfg.codebook_size,
                                           cfg.code_dim, cfg.residual_gate)
        self.register_buffer("feat_mean", torch.zeros(FEATURE_DIM))
        self.register_buffer("feat_std", torch.ones(FEATURE_DIM))
        self.register_buffer("fitted", torch.zeros(1))

    def set_norm(self, mean, std):
        self.feat_mean.copy_(torch.as_tensor(mean, dtype=torch.float32))
        self.feat_std.copy_(torch.as_tensor(std, dtype=torch.float32))

    def normalize(self, feats):
        return (feats - self.feat_mean) / self.feat_std

    def denormalize(self, feats):
        return feats * self.feat_std + self.feat_mean

    def encode_latent(self, feats):
        # feats (B, T, 263), T a multiple of downsample -> (B, T', D)
        x = self.normalize(feats).transpose(1, 2)
        return self.encoder(x).transpose(1, 2)

    def decode_latent(self, latent):
        # (B, T', D) -> (B, T' * r, 263)
        x = self.decoder(latent.transpose(1, 2)).transpose(1, 2)
        return self.denormalize(x)


def _pad_frames(features, r):
    t = features.shape[0]
    t_pad = math.ceil(t / r) * r
    if t_pad == t:
        return features
    tail = np.repeat(features[-1:], t_pad - t, axis=0)
    return np.concatenate([features, tail], axis=0)


@dataclass
class RqvaeCheckpoint:
    model: RqvaeModel
    config: RqvaeConfig

    def _check(self):
        if float(self.model.fitted) < 0.5:
            raise NotFitted("RQ-VAE used before training")


def rqvae_encode(motion, checkpoint):
    """Motion -> residual token grid (full depth)."""
    checkpoint._check()
    model = checkpoint.model
    model.eval()
    r = checkpoint.config.downsample
    feats = _pad_frames(motion.features, r)
    with torch.no_grad():
        latent = model.encode_latent(torch.from_numpy(feats[None].astype(np.float32)))
        indices, _ = model.codebooks.quantize(latent)
    return MotionTokenGrid(tokens=indices[0].numpy(), downsample=r, frames=motion.frames)


def rqvae_decode(grid, checkpoint, num_layers=None):
    """Token grid -> MotionSequence, using the first `num_layers` codebooks."""
    checkpoint._check()
    model = checkpoint.model
    model.eval()
    with torch.no_grad():
        idx = torch.from_numpy(grid.tokens[None])
        latent = model.codebooks.lookup(idx, num_layers)
        feats = model.decode_latent(latent)[0, : grid.frames].numpy()
    feats[:, 259:263] = np.clip(feats[:, 259:263], 0.0, 1.0)
    return MotionSequence(feats)


def train_rqvae(motions, config=None, seed=0, log_fn=None):
    """Fit the tokenizer on a list of motions (fixed-length random crops)."""
    if not motions:
        raise ValueError("need at least one motion")
    cfg = config or RqvaeConfig()
    seed_everything(seed)

    stacked = np.concatenate([m.features for m in motions], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-3)

    model = RqvaeModel(cfg)
    model.set_norm(mean, std)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    # one whole motion per step, padded exactly as rqvae_encode pads it, so
    # training and inference see identical conv boundaries
    r = cfg.downsample
    padded = [torch.from_numpy(_pad_frames(m.features, r).astype(np.float32)[None])
              for m in motions]
    true_frames = [m.frames for m in motions]
    rng = np.random.default_rng(seed)

    warmup = int(cfg.steps * cfg.warmup_fraction)
    for step in range(cfg.steps):
        pick = int(rng.integers(len(padded)))
        batch = padded[pick]
        frames = true_frames[pick]
        latent = model.encode_latent(batch)
        target = model.normalize(batch)

        if step < warmup:
            # plain-autoencoder warmup: without it the quantization losses
            # pull the encoder into time-constant latents that quantize for
            # free but cannot carry fast motion content
            decoded = model.decode_latent(latent)
            loss = F.smooth_l1_loss(model.normalize(decoded), target)
        else:
            if step == warmup:
                with torch.no_grad():
                    all_latents = torch.cat(
                        [model.encode_latent(p).reshape(-1, cfg.code_dim)
                         for p in padded], dim=0)
                model.codebooks.init_from_data(all_latents, rng)
            partials, vq_loss = model.codebooks.quantize_train(latent)

            # the decoder sees every quantizer depth (deeper sums must decode
            # better); only the full-depth pass trains the encoder, otherwise
            # the shallow losses collapse the latents onto the first codebook
            depth_mse = []
            recon_loss = latent.new_zeros(())
            for q, quant in enumerate(partials):
                if q == len(partials) - 1:
                    quant = latent + (quant - latent).detach()
                decoded = model.decode_latent(quant)
                recon_loss = recon_loss + F.smooth_l1_loss(model.normalize(decoded),
                                                           target)
                # ordering is judged on the true frames, exactly as decoding
                # crops them
                depth_mse.append(
                    ((decoded[:, :frames] - batch[:, :frames]) ** 2).mean(dim=(1, 2)))
            recon_loss = recon_loss / len(partials)

            # at overfit scale the decoder can resolve every depth equally
            # well, so the deeper-is-better ordering is enforced per sample
            # with a hinge margin
            order_loss = latent.new_zeros(())
            for q in range(len(depth_mse) - 1):
                order_loss = order_loss + torch.relu(
                    depth_mse[q + 1] - (1.0 - cfg.depth_margin) * depth_mse[q]
                ).mean()

            ramp = min(1.0, (step - warmup + 1) / max(1, cfg.steps // 10))
            loss = (recon_loss + vq_loss + cfg.order_weight * order_loss
                    + ramp * cfg.commitment
                    * F.mse_loss(latent, partials[-1].detach()))
        if not torch.isfinite(loss):
            raise TrainingDiverged("rqvae loss is non-finite", epoch=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        model.codebooks.pin_zero_codes()
        if step == int(cfg.steps * 0.6):
            for group in opt.param_groups:
                group["lr"] = cfg.lr * 0.15
        if log_fn is not None and (step % 100 == 0 or step == cfg.steps - 1):
            log_fn(f"epoch={step} loss={float(loss.detach()):.6f}")

    _ordering_epilogue(model, cfg, padded, true_frames, log_fn)

    with torch.no_grad():
        model.fitted.fill_(1.0)
    model.eval()
    return RqvaeCheckpoint(model=model, config=cfg)


@torch.no_grad()
def _depth_errors(model, batch, frames):
    """Per-depth decode MSE, matching the public decode path (incl. the
    foot-contact clip and float64 averaging) so the epilogue verifies exactly
    what reconstruction_mse will measure."""
    latent = model.encode_latent(batch)
    indices, _ = model.codebooks.quantize(latent)
    target = batch[0, :frames].numpy()
    errs = []
    for q in range(1, model.codebooks.num_layers + 1):
        quant = model.codebooks.lookup(indices, q)
        feats = model.decode_latent(quant)[0, :frames].numpy().copy()
        feats[:, 259:263] = np.clip(feats[:, 259:263], 0.0, 1.0)
        errs.append(float(np.mean((feats - target) ** 2)))
    return errs


def _ordering_epilogue(model, cfg, padded, true_frames, log_fn):
    """Low-rate repair rounds until every training sequence decodes with
    non-increasing error over quantizer depth; stops the moment the property
    verifies, so the returned weights are exactly the verified ones."""
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr * 0.02)
    for round_idx in range(cfg.order_repair_rounds):
        ok = True
        for batch, frames in zip(padded, true_frames):
            errs = _depth_errors(model, batch, frames)
            # exact ties are fine (gated layers contribute exactly nothing);
            # nothing runs after a successful check, so this is the condition
            # the shipped weights satisfy
            if any(errs[q + 1] > errs[q] for q in range(len(errs) - 1)):
                ok = False
                break
        if ok:
            if log_fn is not None:
                log_fn(f"epoch=order_repair rounds={round_idx} loss=0.0")
            return
        for batch, frames in zip(padded, true_frames):
            latent = model.encode_latent(batch)
            partials, _ = model.codebooks.quantize_train(latent)
            depth_mse = []
            recon_loss = latent.new_zeros(())
            target = model.normalize(batch)
            for q, quant in enumerate(partials):
                if q == len(partials) - 1:
                    quant = latent + (quant - latent).detach()
                decoded = model.decode_latent(quant)
                recon_loss = recon_loss + F.smooth_l1_loss(model.normalize(decoded),
                                                           target)
                depth_mse.append(
                    ((decoded[:, :frames] - batch[:, :frames]) ** 2).mean())
            order_loss = latent.new_zeros(())
            for q in range(len(depth_mse) - 1):
                order_loss = order_loss + torch.relu(
                    depth_mse[q + 1] - (1.0 - cfg.depth_margin) * depth_mse[q])
            loss = recon_loss / len(partials) + cfg.order_weight * order_loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.codebooks.pin_zero_codes()


def reconstruction_mse(motion, checkpoint, num_layers=None):
    """Mean squared error of encode->decode against the original features."""
    grid = rqvae_encode(motion, checkpoint)
    recon = rqvae_decode(grid, checkpoint, num_layers)
    return float(np.mean((recon.features - motion.features) ** 2))


def save_rqvae_checkpoint(path, checkpoint):
    digest = section_digest("rqvae", checkpoint.config)
    save_blobs(path, COMPONENT, digest, state_dict_to_blobs(checkpoint.model.state_dict()))


def load_rqvae_checkpoint(path, config):
    digest = section_digest("rqvae", config)
    _, _, arrays = load_blobs(path, expected_component=COMPONENT, expected_digest=digest)
    model = RqvaeModel(config)
    model.load_state_dict(blobs_to_state_dict(arrays, model.state_dict()))
    model.eval()
    return RqvaeCheckpoint(model=model, config=config)
