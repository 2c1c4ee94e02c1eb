"""Keyframe selection, windowed motion summaries, and hierarchical annotation.

The annotation pipeline mirrors a spatial-then-temporal split: a pose
describer turns every frame into text, a text embedder turns those into unit
vectors, keyframes fall where cosine similarity to the last keyframe drops
below a threshold, and per-group summaries over inter-keyframe windows feed an
annotator client that writes the 6 joint texts and 15 interaction texts.
All bundled clients are deterministic stubs; remote backends plug in through
the same interfaces.
"""

import json
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .errors import AnnotationBackendError, InvalidEmbedding, InvalidWindow
from .representation import decompose, rotation_6d_to_matrix
from .skeleton import (ALL_PAIRS, DEFAULT_CONNECTIVITY, DEFAULT_SKELETON, GROUP_ORDER,
                       KinematicGroup, canonical_pair)

GROUP_PHRASE = {
    KinematicGroup.TORSO: "torso",
    KinematicGroup.NECK: "neck",
    KinematicGroup.LEFT_ARM: "left arm",
    KinematicGroup.RIGHT_ARM: "right arm",
    KinematicGroup.LEFT_LEG: "left leg",
    KinematicGroup.RIGHT_LEG: "right leg",
}

_AXIS_PHRASES = {
    ("x", 1): "moves to the left",
    ("x", -1): "moves to the right",
    ("y", 1): "moves up",
    ("y", -1): "moves down",
    ("z", 1): "moves forward",
    ("z", -1): "moves backward",
}

_STILL_SPEED = 2e-3
_STILL_DISPLACEMENT = 1e-2


@dataclass
class HierarchicalAnnotation:
    """One or more global captions plus 6 joint texts and 15 interaction texts."""

    global_texts: list
    joint_texts: dict
    interaction_texts: dict

    def __post_init__(self):
        if len(self.global_texts) < 1 or any(not t for t in self.global_texts):
            raise ValueError("need at least one nonempty global caption")
        if sorted(self.joint_texts) != sorted(GROUP_ORDER):
            raise ValueError("joint_texts must cover exactly the 6 groups")
        if sorted(self.interaction_texts) != sorted(ALL_PAIRS):
            raise ValueError("interaction_texts must cover exactly the 15 pairs")
        if any(not t for t in self.joint_texts.values()):
            raise ValueError("empty joint text")
        if any(not t for t in self.interaction_texts.values()):
            raise ValueError("empty interaction text")


@dataclass
class KeyframeSet:
    indices: list
    threshold_used: float


@dataclass
class WindowSummary:
    """Displacement, mean speed, and dominant axis of a group over a window."""

    displacement: np.ndarray
    mean_speed: float
    dominant_axis: str


def select_keyframes(embeddings, threshold):
    """Flag frame 0 and every frame whose cosine to the last keyframe drops below threshold."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise InvalidEmbedding("embeddings must be a nonempty (T, E) matrix")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InvalidEmbedding("embedding rows must be unit norm")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")

    indices = [0]
    anchor = embeddings[0]
    for t in range(1, embeddings.shape[0]):
        if float(embeddings[t] @ anchor) < threshold:
            indices.append(t)
            anchor = embeddings[t]
    return KeyframeSet(indices=indices, threshold_used=threshold)


def _summary_from_series(position, velocity, window):
    t0, t1 = window
    displacement = position[t1] - position[t0]
    mean_speed = float(np.mean(np.linalg.norm(velocity[t0:t1 + 1], axis=-1)))
    axis = "xyz"[int(np.argmax(np.abs(displacement)))]
    return WindowSummary(displacement=displacement, mean_speed=mean_speed,
                         dominant_axis=axis)


def window_motion_estimate(motion, group, window, skeleton=DEFAULT_SKELETON):
    """Displacement / mean speed / dominant axis of one group over [t0, t1]."""
    t0, t1 = window
    if not 0 <= t0 < t1 < motion.frames:
        raise InvalidWindow(f"window {window} invalid for {motion.frames} frames")
    groups, _ = decompose(motion, skeleton)
    feats = groups[group]
    return _summary_from_series(feats.position, feats.velocity, window)


class RuleBasedPoseDescriber:
    """Per-frame pose text from limb-angle buckets (PoseScript stand-in)."""

    _BUCKETS = ((0.1, "extended"), (0.25, "barely bent"), (0.4, "slightly bent"),
                (0.6, "somewhat bent"), (0.9, "bent"), (1.3, "deeply bent"))

    def describe_frame(self, motion, frame, skeleton=DEFAULT_SKELETON):
        rot = motion.rotations_6d[frame].astype(np.float64)   # (21, 6)
        mats = rotation_6d_to_matrix(rot)
        angles = np.arccos(np.clip((np.trace(mats, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0))
        parts = []
        for g in GROUP_ORDER:
            members = [j - 1 for j in skeleton.joints_of(g) if j >= 1]
            mean_angle = float(np.mean(angles[members]))
            word = "folded"
            for limit, name in self._BUCKETS:
                if mean_angle < limit:
                    word = name
                    break
            parts.append(f"{GROUP_PHRASE[g]} {word}")
        return ", ".join(parts)


class StubAnnotator:
    """Deterministic template annotator with an append-only audit log."""

    def __init__(self):
        self.audit_log = []

    def _movement_phrase(self, summaries):
        still = all(s.mean_speed < _STILL_SPEED
                    and float(np.max(np.abs(s.displacement))) < _STILL_DISPLACEMENT
                    for s in summaries)
        if still or not summaries:
            return None
        phrases = []
        for s in summaries:
            axis_idx = "xyz".index(s.dominant_axis)
            sign = 1 if s.displacement[axis_idx] >= 0 else -1
            if float(np.max(np.abs(s.displacement))) < _STILL_DISPLACEMENT:
                continue
            phrases.append(_AXIS_PHRASES[(s.dominant_axis, sign)])
        if not phrases:
            return None
        deduped = [phrases[0]]
        for p in phrases[1:]:
            if p != deduped[-1]:
                deduped.append(p)
        return " then ".join(deduped)

    def describe(self, target, window_summaries, pose_texts):
        if target == "global":
            moving = [GROUP_PHRASE[g] for g, s in window_summaries.items()
                      if self._movement_phrase(s) is not None]
            if moving:
                response = "a person moves the " + " and the ".join(moving)
            else:
                response = "a person remains still"
        elif isinstance(target, KinematicGroup):
            phrase = self._movement_phrase(window_summaries)
            name = GROUP_PHRASE[target]
            response = f"the {name} {phrase}" if phrase else f"the {name} remains still"
        else:
            g, h = target
            phrase = self._movement_phrase(window_summaries)
            a, b = GROUP_PHRASE[g], GROUP_PHRASE[h]
            if phrase:
                response = f"the {b} {phrase} relative to the {a}"
            else:
                response = f"the {a} and the {b} hold steady relative to each other"
        request = {"target": str(target),
                   "windows": "per-group" if isinstance(window_summaries, dict)
                   else len(window_summaries)}
        self.audit_log.append((request, response, ""))
        return response


class RemoteAnnotator:
    """HTTP annotator client; posts JSON requests, retries, keeps an audit log."""

    def __init__(self, endpoint, api_key=None, retries=2, timeout=10.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.retries = retries
        self.timeout = timeout
        self.audit_log = []

    def describe(self, target, window_summaries, pose_texts):
        payload = {
            "target": str(target),
            "pose_texts": list(pose_texts),
            "windows": [
                {"displacement": [float(x) for x in s.displacement],
                 "mean_speed": s.mean_speed, "dominant_axis": s.dominant_axis}
                for s in (window_summaries if not isinstance(window_summaries, dict) else [])
            ],
        }
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_err = None
        for attempt in range(self.retries + 1):
            try:
                req = urllib.request.Request(self.endpoint, data=body, headers=headers)
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    response = json.loads(resp.read().decode("utf-8"))["text"]
                self.audit_log.append((payload, response, ""))
                return response
            except Exception as err:  # network/parse failures roll into one backend error
                last_err = err
        raise AnnotationBackendError(str(last_err), retries=self.retries)


def _windows_from_keyframes(indices, frames):
    windows = list(zip(indices[:-1], indices[1:]))
    if indices[-1] < frames - 1:
        windows.append((indices[-1], frames - 1))
    return windows


def annotate_sequence(motion, embedder, pose_describer, annotator,
                      skeleton=DEFAULT_SKELETON, connectivity=DEFAULT_CONNECTIVITY,
                      threshold=0.9, global_texts=None):
    """Run the stub annotation pipeline over one motion.

    Keyframes come from pose-text embeddings, per-group summaries from the
    windows between consecutive keyframes, and the annotator fills the 6 + 15
    text slots. Deterministic under the bundled stub clients.
    """
    pose_texts = [pose_describer.describe_frame(motion, t, skeleton)
                  for t in range(motion.frames)]
    embeddings = np.stack([embedder.embed(t) for t in pose_texts], axis=0)
    keyframes = select_keyframes(embeddings, threshold)
    windows = _windows_from_keyframes(keyframes.indices, motion.frames)
    keyframe_texts = [pose_texts[i] for i in keyframes.indices]

    groups, pairs = decompose(motion, skeleton, connectivity)

    group_summaries = {}
    for g in GROUP_ORDER:
        feats = groups[g]
        if windows:
            group_summaries[g] = [_summary_from_series(feats.position, feats.velocity, w)
                                  for w in windows]
        else:
            group_summaries[g] = [WindowSummary(np.zeros(3), 0.0, "x")]

    joint_texts = {g: _call_annotator(annotator, g, group_summaries[g], keyframe_texts)
                   for g in GROUP_ORDER}

    interaction_texts = {}
    for g, h in ALL_PAIRS:
        pf = pairs[(g, h)]
        delta_v = groups[h].velocity - groups[g].velocity
        if windows:
            summaries = [_summary_from_series(pf.delta_position, delta_v, w)
                         for w in windows]
        else:
            summaries = [WindowSummary(np.zeros(3), 0.0, "x")]
        interaction_texts[(g, h)] = _call_annotator(annotator, (g, h), summaries,
                                                    keyframe_texts)

    if global_texts is None:
        global_texts = [_call_annotator(annotator, "global", group_summaries,
                                        keyframe_texts)]
    return HierarchicalAnnotation(global_texts=list(global_texts),
                                  joint_texts=joint_texts,
                                  interaction_texts=interaction_texts)


def _call_annotator(annotator, target, summaries, pose_texts, retries=2):
    last_err = None
    for _ in range(retries + 1):
        try:
            return annotator.describe(target, summaries, pose_texts)
        except AnnotationBackendError:
            raise
        except Exception as err:
            last_err = err
    raise AnnotationBackendError(str(last_err), retries=retries)


# -- annotation file format: [GLOBAL] / [JOINT:<group>] / [INTER:<g>,<h>] --

def save_annotation(path, annotation):
    lines = ["[GLOBAL]"]
    lines.extend(annotation.global_texts)
    for g in GROUP_ORDER:
        lines.append(f"[JOINT:{g.value}]")
        lines.append(annotation.joint_texts[g])
    for g, h in ALL_PAIRS:
        lines.append(f"[INTER:{g.value},{h.value}]")
        lines.append(annotation.interaction_texts[(g, h)])
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_annotation(path):
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read()
    section = None
    global_texts, joint_texts, interaction_texts = [], {}, {}
    by_group = {g.value: g for g in GROUP_ORDER}
    for line in raw.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            continue
        if section == "GLOBAL":
            global_texts.append(line)
        elif section and section.startswith("JOINT:"):
            g = by_group[section.split(":", 1)[1]]
            joint_texts[g] = (joint_texts.get(g, "") + " " + line).strip()
        elif section and section.startswith("INTER:"):
            a, b = section.split(":", 1)[1].split(",")
            key = canonical_pair(by_group[a], by_group[b])
            interaction_texts[key] = (interaction_texts.get(key, "") + " " + line).strip()
    return HierarchicalAnnotation(global_texts=global_texts, joint_texts=joint_texts,
                                  interaction_texts=interaction_texts)
