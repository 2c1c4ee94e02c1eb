"""Reasoner client interface: global caption -> (6 joint texts, 15 interaction texts).

A fine-tuned language model fills this role in production; the bundled stub
expands captions through the shared keyword rule table, deterministically.
"""

from ..skeleton import ALL_PAIRS, GROUP_ORDER
from ..templates import (interaction_texts_for, joint_texts_for, parse_caption,
                         MotionDescriptor)

_NATURAL = {
    "Torso": "the torso moves naturally",
    "Neck": "the neck moves naturally",
    "LeftArm": "the left arm moves naturally",
    "RightArm": "the right arm moves naturally",
    "LeftLeg": "the left leg moves naturally",
    "RightLeg": "the right leg moves naturally",
}


class TemplateReasonerStub:
    """Keyword-rule expansion of a global caption; always exactly 6 + 15 texts."""

    def expand(self, global_text):
        if not global_text or not global_text.strip():
            raise ValueError("global text must be nonempty")
        desc = parse_caption(global_text)
        if desc.family == "unknown":
            joint = {g: _NATURAL[g.value] for g in GROUP_ORDER}
            hold = interaction_texts_for(
                MotionDescriptor("still", desc.side, desc.speed, desc.amplitude))
            return joint, hold
        return joint_texts_for(desc), interaction_texts_for(desc)


def expand_or_none(reasoner, global_text):
    """Run a reasoner client; None on failure so callers can drop to level G."""
    try:
        joint, inter = reasoner.expand(global_text)
        if len(joint) != len(GROUP_ORDER) or len(inter) != len(ALL_PAIRS):
            raise ValueError("reasoner returned wrong text counts")
        return joint, inter
    except Exception:
        return None
