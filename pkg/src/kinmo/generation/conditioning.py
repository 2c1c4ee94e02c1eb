"""Condition token construction for the masked generator.

Tokens come from the trained hierarchical text encoders: one pooled global
token, six joint tokens, fifteen interaction tokens, the low levels fused with
the global token features through the same parameter-free cross attention used
during alignment. Levels strictly extend each other: G, [G; J], [G; J; I].
"""

from dataclasses import dataclass

import numpy as np
import torch

from ..annotation import HierarchicalAnnotation
from ..skeleton import ALL_PAIRS, GROUP_ORDER
from .reasoner import expand_or_none

LEVEL_NAMES = ("g", "gj", "gji")


@dataclass
class ConditionTokens:
    """Per-level condition token sequences (numpy, frozen text features)."""

    level: str                 # maximum available level: "g" | "gj" | "gji"
    global_tokens: np.ndarray  # (1, d)
    joint_tokens: np.ndarray   # (6, d) or empty
    inter_tokens: np.ndarray   # (15, d) or empty

    def tokens_for(self, level):
        if level == "g":
            return self.global_tokens
        if level == "gj":
            return np.concatenate([self.global_tokens, self.joint_tokens], axis=0)
        if level == "gji":
            return np.concatenate([self.global_tokens, self.joint_tokens,
                                   self.inter_tokens], axis=0)
        raise ValueError(f"unknown conditioning level {level!r}")

    def best_level(self, requested="gji"):
        order = {name: i for i, name in enumerate(LEVEL_NAMES)}
        return LEVEL_NAMES[min(order[self.level], order[requested])]


@torch.no_grad()
def condition_tokens_from_annotation(annotation, align_checkpoint):
    """Frozen text features for all three levels of one annotation."""
    model = align_checkpoint.model
    model.eval()
    from ..alignment.models import batched_cross_attention, masked_mean

    global_feats, global_pad, joint_tokens, inter_tokens = \
        model._level_token_sets([annotation])
    pooled = masked_mean(global_feats, global_pad)                  # (1, d)
    joint_fused = joint_tokens + batched_cross_attention(joint_tokens, global_feats,
                                                         global_pad)
    inter_fused = inter_tokens + batched_cross_attention(inter_tokens, global_feats,
                                                         global_pad)
    return ConditionTokens(
        level="gji",
        global_tokens=pooled.numpy().astype(np.float32),
        joint_tokens=joint_fused[0].numpy().astype(np.float32),
        inter_tokens=inter_fused[0].numpy().astype(np.float32),
    )


def condition_tokens_from_text(global_text, reasoner, align_checkpoint):
    """Expand a caption through the reasoner; drop to level G if it fails."""
    if not global_text or not global_text.strip():
        raise ValueError("global text must be nonempty")
    expanded = expand_or_none(reasoner, global_text)
    if expanded is None:
        placeholder_j = {g: "unavailable" for g in GROUP_ORDER}
        placeholder_i = {p: "unavailable" for p in ALL_PAIRS}
        ann = HierarchicalAnnotation([global_text], placeholder_j, placeholder_i)
        cond = condition_tokens_from_annotation(ann, align_checkpoint)
        cond = ConditionTokens("g", cond.global_tokens, cond.joint_tokens,
                               cond.inter_tokens)
        return cond, None
    joint, inter = expanded
    ann = HierarchicalAnnotation([global_text], joint, inter)
    return condition_tokens_from_annotation(ann, align_checkpoint), ann
