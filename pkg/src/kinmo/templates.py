"""Shared caption grammar for toy motions and the rule-based reasoner stub.

Both the synthetic-data generator and the template reasoner derive the 6
joint texts and 15 interaction texts from the same (family, side, speed,
amplitude) descriptor, so a reasoner expansion of a toy caption reproduces the
toy annotation exactly.
"""

from dataclasses import dataclass

from .skeleton import ALL_PAIRS, GROUP_ORDER, KinematicGroup, canonical_pair

SPEED_WORDS = ("very slowly", "slowly", "steadily", "quickly", "very quickly")
SPEED_FREQ = {"very slowly": 0.5, "slowly": 0.75, "steadily": 1.0,
              "quickly": 1.5, "very quickly": 2.0}

AMP_WORDS = ("subtly", "moderately", "widely")
AMP_SCALE = {"subtly": 0.5, "moderately": 1.0, "widely": 1.6}

FAMILIES = ("wave", "walk", "squat", "turn", "still")

_T = KinematicGroup.TORSO
_N = KinematicGroup.NECK
_LA = KinematicGroup.LEFT_ARM
_RA = KinematicGroup.RIGHT_ARM
_LL = KinematicGroup.LEFT_LEG
_RL = KinematicGroup.RIGHT_LEG

_STILL = {
    _T: "the torso remains still",
    _N: "the neck remains still",
    _LA: "the left arm remains still",
    _RA: "the right arm remains still",
    _LL: "the left leg remains still",
    _RL: "the right leg remains still",
}

_HOLD = "the {a} and the {b} hold steady relative to each other"

_NAMES = {
    _T: "torso", _N: "neck", _LA: "left arm", _RA: "right arm",
    _LL: "left leg", _RL: "right leg",
}


@dataclass(frozen=True)
class MotionDescriptor:
    family: str       # one of FAMILIES
    side: str         # "left" | "right" (wave/turn), else ""
    speed: str        # SPEED_WORDS entry
    amplitude: str    # AMP_WORDS entry


def caption_for(desc):
    if desc.family == "wave":
        return f"a person waves the {desc.side} hand {desc.speed} and {desc.amplitude}"
    if desc.family == "walk":
        return f"a person walks forward {desc.speed} with {desc.amplitude} swinging strides"
    if desc.family == "squat":
        return f"a person squats down and up {desc.speed} bending {desc.amplitude}"
    if desc.family == "turn":
        return f"a person turns to the {desc.side} {desc.speed} rotating {desc.amplitude}"
    return "a person stands still"


def joint_texts_for(desc):
    texts = dict(_STILL)
    if desc.family == "wave":
        arm = _LA if desc.side == "left" else _RA
        texts[arm] = (f"the {desc.side} arm raises and waves {desc.speed}, "
                      f"swinging {desc.amplitude}")
    elif desc.family == "walk":
        texts[_LL] = f"the left leg strides forward and back {desc.speed}"
        texts[_RL] = f"the right leg strides forward and back {desc.speed}"
        texts[_T] = f"the torso advances forward {desc.speed}"
    elif desc.family == "squat":
        texts[_LL] = f"the left leg bends {desc.amplitude} at the knee {desc.speed}"
        texts[_RL] = f"the right leg bends {desc.amplitude} at the knee {desc.speed}"
        texts[_T] = f"the torso lowers and rises {desc.speed}"
    elif desc.family == "turn":
        texts[_T] = f"the torso rotates to the {desc.side} {desc.speed}"
        texts[_N] = "the neck turns together with the body"
        texts[_LL] = f"the left leg pivots {desc.speed}"
        texts[_RL] = f"the right leg pivots {desc.speed}"
    return texts


def interaction_texts_for(desc):
    texts = {pair: _HOLD.format(a=_NAMES[pair[0]], b=_NAMES[pair[1]]) for pair in ALL_PAIRS}
    if desc.family == "wave":
        arm = _LA if desc.side == "left" else _RA
        texts[canonical_pair(_T, arm)] = (
            f"the {desc.side} arm lifts away from the torso {desc.speed}")
        texts[canonical_pair(_LA, _RA)] = (
            f"the {desc.side} arm moves while the other arm hangs still")
    elif desc.family == "walk":
        texts[canonical_pair(_LL, _RL)] = f"the legs alternate strides {desc.speed}"
        texts[canonical_pair(_T, _LL)] = "the left leg carries the torso forward"
        texts[canonical_pair(_T, _RL)] = "the right leg carries the torso forward"
    elif desc.family == "squat":
        texts[canonical_pair(_T, _LL)] = f"the torso sinks toward the left leg {desc.speed}"
        texts[canonical_pair(_T, _RL)] = f"the torso sinks toward the right leg {desc.speed}"
        texts[canonical_pair(_LL, _RL)] = "the legs bend together evenly"
    elif desc.family == "turn":
        texts[canonical_pair(_T, _N)] = "the neck follows the torso rotation"
        texts[canonical_pair(_T, _LL)] = f"the torso swivels over the left leg {desc.speed}"
        texts[canonical_pair(_T, _RL)] = f"the torso swivels over the right leg {desc.speed}"
    return texts


def _find_phrase(tokens, phrases):
    """Longest phrase (as a token tuple) found in the token sequence, or None."""
    token_str = " ".join(tokens)
    best = None
    for phrase in phrases:
        if phrase in token_str and (best is None or len(phrase) > len(best)):
            best = phrase
    return best


def parse_caption(text):
    """Best-effort descriptor from free text; unmatched parts fall to defaults."""
    from .textembed import tokenize

    tokens = tokenize(text)
    token_str = " ".join(tokens)

    family = "still"
    for key, fam in (("wave", "wave"), ("wav", "wave"), ("walk", "walk"),
                     ("squat", "squat"), ("turn", "turn"), ("spin", "turn")):
        if any(t.startswith(key) for t in tokens):
            family = fam
            break

    side = "right"
    if "left" in tokens:
        side = "left"
    speed = _find_phrase(tokens, SPEED_WORDS) or "steadily"
    amp = _find_phrase(tokens, AMP_WORDS) or "moderately"
    if family == "still" and token_str and "still" not in tokens \
            and "stands" not in tokens and "stand" not in tokens:
        family = "unknown"
    return MotionDescriptor(family=family, side=side, speed=speed, amplitude=amp)
