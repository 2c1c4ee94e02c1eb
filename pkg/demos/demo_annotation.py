# Hierarchical annotation with the deterministic stub clients.
#
# The pipeline: rule-based pose texts per frame -> hashed sentence embeddings
# -> keyframes where cosine similarity to the last keyframe drops -> windowed
# motion summaries per group -> template annotator writes 1 global caption,
# 6 joint texts, and 15 interaction texts.

import numpy as np

from kinmo.annotation import (RuleBasedPoseDescriber, StubAnnotator,
                              annotate_sequence, select_keyframes)
from kinmo.skeleton import GROUP_ORDER, KinematicGroup
from kinmo.templates import MotionDescriptor
from kinmo.textembed import HashingTextEmbedder
from kinmo.toydata import toy_motion

rng = np.random.default_rng(1)
motion = toy_motion(MotionDescriptor("wave", "right", "steadily", "widely"),
                    length=40, rng=rng, noise_level=0.0)

describer = RuleBasedPoseDescriber()
embedder = HashingTextEmbedder(64)

pose_texts = [describer.describe_frame(motion, t) for t in range(motion.frames)]
print("frame 0 pose text:")
print(" ", pose_texts[0])

embeddings = np.stack([embedder.embed(t) for t in pose_texts])
keyframes = select_keyframes(embeddings, threshold=0.995)
print(f"\nkeyframes at threshold 0.995: {keyframes.indices}")

annotator = StubAnnotator()
annotation = annotate_sequence(motion, embedder, describer, annotator,
                               threshold=0.995)
print(f"\nglobal caption: {annotation.global_texts[0]}")
print("joint texts:")
for g in GROUP_ORDER:
    print(f"  {g.value:9s} {annotation.joint_texts[g]}")
print("two of the fifteen interaction texts:")
pair = (KinematicGroup.TORSO, KinematicGroup.RIGHT_ARM)
print(f"  {pair[0].value}/{pair[1].value}: {annotation.interaction_texts[pair]}")
pair = (KinematicGroup.LEFT_ARM, KinematicGroup.RIGHT_ARM)
print(f"  {pair[0].value}/{pair[1].value}: {annotation.interaction_texts[pair]}")

print(f"\naudit log holds {len(annotator.audit_log)} request/response pairs "
      "(the hook for human refinement rounds)")
