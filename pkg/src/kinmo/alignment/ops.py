"""Loss and fusion primitives for text-motion alignment.

All functions accept torch tensors (any float dtype, autograd-friendly) or
array-likes, and return torch tensors.
"""

import math

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import (DimError, EmptyContext, InvalidTemperature, ZeroNormEmbedding)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def cross_attention_fuse(z_low, z_coarse, d_k=None):
    """softmax(z_low z_coarse^T / sqrt(d_k)) z_coarse.

    Each output row is a convex combination of z_coarse rows, which pulls the
    coarse semantics into every low-level token.
    """
    z_low, z_coarse = _as_tensor(z_low), _as_tensor(z_coarse)
    if z_coarse.shape[0] == 0:
        raise EmptyContext("cross attention needs a nonempty context")
    if z_low.shape[-1] != z_coarse.shape[-1]:
        raise DimError(f"dim mismatch {z_low.shape[-1]} vs {z_coarse.shape[-1]}")
    if d_k is None:
        d_k = z_low.shape[-1]
    logits = z_low @ z_coarse.transpose(-1, -2) / math.sqrt(d_k)
    return torch.softmax(logits, dim=-1) @ z_coarse


def progressive_fuse(coarse, joint, inter, gamma_joint=0.0, gamma_inter=0.0):
    """Accumulate level means (optionally a scaled sigma) into the coarse mean.

    Each argument is a (mu, sigma) pair. Returns (z_global, z_joint, z_inter).
    """
    mu_c, _ = coarse
    mu_j, sd_j = joint
    mu_i, sd_i = inter
    mu_c, mu_j, mu_i = _as_tensor(mu_c), _as_tensor(mu_j), _as_tensor(mu_i)
    sd_j, sd_i = _as_tensor(sd_j), _as_tensor(sd_i)
    if not (mu_c.shape == mu_j.shape == mu_i.shape):
        raise DimError("level means must share one shape")
    z_global = mu_c
    z_joint = z_global + mu_j + gamma_joint * sd_j
    z_inter = z_joint + mu_i + gamma_inter * sd_i
    return z_global, z_joint, z_inter


def similarity_matrix(z_text, z_motion):
    """S_ij = cos(text_i, motion_j); raises on zero-norm rows."""
    z_text, z_motion = _as_tensor(z_text), _as_tensor(z_motion)
    tn = torch.linalg.norm(z_text, dim=-1)
    mn = torch.linalg.norm(z_motion, dim=-1)
    if torch.any(tn == 0) or torch.any(mn == 0):
        raise ZeroNormEmbedding("cosine undefined for zero-norm rows")
    return (z_text / tn[:, None]) @ (z_motion / mn[:, None]).T


def infonce(similarity, temperature, negative_filter=None):
    """Symmetric InfoNCE over an N x N similarity matrix.

    -(1/2N) sum_i [log softmax_row(S/tau)_ii + log softmax_col(S/tau)_ii].
    `negative_filter[i, j] = True` drops pair (i, j) from the denominators;
    the diagonal is never dropped.
    """
    s = _as_tensor(similarity)
    if temperature <= 0:
        raise InvalidTemperature(f"temperature must be positive, got {temperature}")
    n = s.shape[0]
    if s.ndim != 2 or s.shape[1] != n:
        raise DimError("similarity matrix must be square")
    logits = s / temperature
    if negative_filter is not None:
        mask = torch.as_tensor(np.asarray(negative_filter, dtype=bool))
        mask = mask & ~torch.eye(n, dtype=torch.bool)
        logits = logits.masked_fill(mask, float("-inf"))
    diag = torch.arange(n)
    row = torch.log_softmax(logits, dim=1)[diag, diag]
    col = torch.log_softmax(logits, dim=0)[diag, diag]
    return -(row.sum() + col.sum()) / (2 * n)


def gaussian_kl(mu_p, sigma_p, mu_q, sigma_q):
    """Closed-form KL(N(mu_p, sigma_p^2) || N(mu_q, sigma_q^2)), diagonal, summed."""
    mu_p, sigma_p = _as_tensor(mu_p), _as_tensor(sigma_p)
    mu_q, sigma_q = _as_tensor(mu_q), _as_tensor(sigma_q)
    var_ratio = (sigma_p / sigma_q) ** 2
    return 0.5 * torch.sum(var_ratio + ((mu_q - mu_p) / sigma_q) ** 2 - 1.0
                           - torch.log(var_ratio))


def kl_regularizers(text_dist, motion_dist):
    """KL of each modality distribution to the standard normal, summed.

    Arguments are (mu, sigma) pairs; symmetric under swapping text and motion.
    The cross-modal pull lives in the embedding similarity loss instead.
    """
    mu_t, sd_t = text_dist
    mu_m, sd_m = motion_dist
    mu_t, sd_t = _as_tensor(mu_t), _as_tensor(sd_t)
    mu_m, sd_m = _as_tensor(mu_m), _as_tensor(sd_m)
    zero_t, one_t = torch.zeros_like(mu_t), torch.ones_like(sd_t)
    zero_m, one_m = torch.zeros_like(mu_m), torch.ones_like(sd_m)
    return gaussian_kl(mu_t, sd_t, zero_t, one_t) + gaussian_kl(mu_m, sd_m, zero_m, one_m)


def embedding_similarity_loss(z_text, z_motion):
    """Smooth-L1 between matched text and motion latents (delta = 1)."""
    z_text, z_motion = _as_tensor(z_text), _as_tensor(z_motion)
    if z_text.shape != z_motion.shape:
        raise DimError("latent shapes must match")
    return F.smooth_l1_loss(z_text, z_motion)


def reconstruction_loss(decoded, target):
    """Smooth-L1 between decoded and target motion features (delta = 1)."""
    decoded, target = _as_tensor(decoded), _as_tensor(target)
    if decoded.shape != target.shape:
        raise DimError("feature shapes must match")
    return F.smooth_l1_loss(decoded, target)
