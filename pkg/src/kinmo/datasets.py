"""Corpus persistence, HumanML3D ingestion, and mirror augmentation."""

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .annotation import HierarchicalAnnotation, load_annotation, save_annotation
from .control import TrajectoryConstraint, load_constraint, save_constraint
from .errors import IngestError
from .generation.reasoner import TemplateReasonerStub
from .motion import FEATURE_DIM, FPS, MotionSequence, load_kmot, save_kmot
from .representation import mirror_motion
from .skeleton import ALL_PAIRS, GROUP_ORDER, KinematicGroup, canonical_pair


@dataclass
class CorpusEntry:
    entry_id: str
    motion: MotionSequence
    annotation: HierarchicalAnnotation
    constraint: TrajectoryConstraint = None


@dataclass
class Corpus:
    entries: list
    fps: int = FPS
    split: dict = field(default_factory=dict)   # name -> list of entry ids

    def __len__(self):
        return len(self.entries)

    def by_id(self, entry_id):
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise KeyError(entry_id)

    def pairs(self):
        return [(e.motion, e.annotation) for e in self.entries]

    def subset(self, ids):
        wanted = set(ids)
        return Corpus(entries=[e for e in self.entries if e.entry_id in wanted],
                      fps=self.fps, split={})


def save_corpus(root, corpus):
    os.makedirs(os.path.join(root, "motions"), exist_ok=True)
    os.makedirs(os.path.join(root, "annotations"), exist_ok=True)
    os.makedirs(os.path.join(root, "constraints"), exist_ok=True)
    ids = []
    for e in corpus.entries:
        ids.append(e.entry_id)
        save_kmot(os.path.join(root, "motions", f"{e.entry_id}.kmot"), e.motion)
        save_annotation(os.path.join(root, "annotations", f"{e.entry_id}.ann"),
                        e.annotation)
        if e.constraint is not None:
            save_constraint(os.path.join(root, "constraints", f"{e.entry_id}.traj"),
                            e.constraint)
    manifest = {"ids": ids, "fps": corpus.fps, "split": corpus.split}
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_corpus(root):
    with open(os.path.join(root, "manifest.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    entries = []
    for entry_id in manifest["ids"]:
        motion = load_kmot(os.path.join(root, "motions", f"{entry_id}.kmot"))
        annotation = load_annotation(os.path.join(root, "annotations",
                                                  f"{entry_id}.ann"))
        traj_path = os.path.join(root, "constraints", f"{entry_id}.traj")
        constraint = None
        if os.path.exists(traj_path):
            constraint = load_constraint(traj_path, frames=motion.frames)
        entries.append(CorpusEntry(entry_id, motion, annotation, constraint))
    return Corpus(entries=entries, fps=manifest.get("fps", FPS),
                  split=manifest.get("split", {}))


# -- HumanML3D ingestion --

_CAPTION_LINE = re.compile(r"^(?P<caption>[^#]+)#")


def _read_caption_file(path):
    captions = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            m = _CAPTION_LINE.match(line)
            if m:
                captions.append(m.group("caption").strip())
    return captions


def _default_split(ids):
    n = len(ids)
    n_train = int(round(n * 0.80))
    n_val = int(round(n * 0.05))
    return {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }


def ingest_humanml3d(root, reasoner=None):
    """Load a HumanML3D-layout directory into a Corpus.

    Expects `new_joint_vecs/<id>.npy` feature arrays (T x 263) and
    `texts/<id>.txt` caption files with lines "caption#tokens#start#end".
    Joint/interaction text slots absent from the dataset are filled by the
    template reasoner from the first caption. Split lists (train/val/test.txt)
    are honored when present, else an 80/5/15 split by sorted id applies.
    """
    reasoner = reasoner or TemplateReasonerStub()
    motion_dir = os.path.join(root, "new_joint_vecs")
    text_dir = os.path.join(root, "texts")
    if not os.path.isdir(motion_dir):
        raise IngestError(f"missing motion directory {motion_dir}")

    ids = sorted(os.path.splitext(name)[0] for name in os.listdir(motion_dir)
                 if name.endswith(".npy"))
    entries = []
    for entry_id in ids:
        path = os.path.join(motion_dir, f"{entry_id}.npy")
        arr = np.load(path)
        if arr.ndim != 2 or arr.shape[1] != FEATURE_DIM:
            raise IngestError(
                f"{path}: expected (T, {FEATURE_DIM}) features, got {arr.shape}")
        motion = MotionSequence(arr)
        text_path = os.path.join(text_dir, f"{entry_id}.txt")
        captions = _read_caption_file(text_path) if os.path.exists(text_path) else []
        if not captions:
            raise IngestError(f"{text_path}: no captions")
        joint, inter = reasoner.expand(captions[0])
        entries.append(CorpusEntry(
            entry_id=entry_id,
            motion=motion,
            annotation=HierarchicalAnnotation(captions, joint, inter),
        ))

    split = {}
    for name in ("train", "val", "test"):
        list_path = os.path.join(root, f"{name}.txt")
        if os.path.exists(list_path):
            with open(list_path, "r", encoding="utf-8") as f:
                split[name] = [line.strip() for line in f if line.strip()]
    if not split:
        split = _default_split(ids)
    return Corpus(entries=entries, split=split)


# -- mirror augmentation --

_MIRROR_GROUP = {
    KinematicGroup.LEFT_ARM: KinematicGroup.RIGHT_ARM,
    KinematicGroup.RIGHT_ARM: KinematicGroup.LEFT_ARM,
    KinematicGroup.LEFT_LEG: KinematicGroup.RIGHT_LEG,
    KinematicGroup.RIGHT_LEG: KinematicGroup.LEFT_LEG,
}

_WORD_SWAP = re.compile(r"\b(left|right)\b")


def mirror_text(text):
    return _WORD_SWAP.sub(lambda m: "right" if m.group(1) == "left" else "left", text)


def mirror_annotation(annotation):
    joint = {}
    for g in GROUP_ORDER:
        src = _MIRROR_GROUP.get(g, g)
        joint[g] = mirror_text(annotation.joint_texts[src])
    inter = {}
    for g, h in ALL_PAIRS:
        src = canonical_pair(_MIRROR_GROUP.get(g, g), _MIRROR_GROUP.get(h, h))
        inter[(g, h)] = mirror_text(annotation.interaction_texts[src])
    return HierarchicalAnnotation(
        global_texts=[mirror_text(t) for t in annotation.global_texts],
        joint_texts=joint,
        interaction_texts=inter,
    )


def mirror_entry(entry):
    """Left/right mirrored copy of a corpus entry (x axis reflected)."""
    constraint = None
    if entry.constraint is not None:
        from .skeleton import MIRROR_JOINT
        perm = np.array([MIRROR_JOINT[j] for j in range(entry.constraint.mask.shape[1])])
        constraint = TrajectoryConstraint(
            mask=entry.constraint.mask[:, perm],
            targets=entry.constraint.targets[:, perm] * np.array([-1.0, 1.0, 1.0]),
        )
    return CorpusEntry(
        entry_id=entry.entry_id + "_M",
        motion=mirror_motion(entry.motion),
        annotation=mirror_annotation(entry.annotation),
        constraint=constraint,
    )
