"""kinmo command line: data, training, generation, editing, and evaluation.

Every command reseeds from --seed, so identical config + seed gives
byte-identical checkpoints, motions, and reports. Training commands print
machine-parseable "epoch=<n> loss=<f>" lines.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import annotation as annotation_mod
from .alignment import (load_alignment_checkpoint, save_alignment_checkpoint,
                        train_alignment)
from .config import PipelineConfig, load_config
from .control import (controlled_generate, load_constraint, load_control_checkpoint,
                      save_control_checkpoint, train_control)
from .datasets import (Corpus, CorpusEntry, ingest_humanml3d, load_corpus,
                       mirror_entry, save_corpus)
from .errors import KinmoError
from .evaluation import (RetrievalProtocol, control_metrics, diversity,
                         fid_from_features, htma_s, mm_dist, mmodality, r_precision,
                         retrieval_report, write_report)
from .generation import (TemplateReasonerStub, edit_infill, generate,
                         load_generator_checkpoint, load_rqvae_checkpoint,
                         rqvae_encode, save_generator_checkpoint,
                         save_rqvae_checkpoint, train_generator, train_rqvae)
from .motion import load_kmot, save_kmot
from .pipeline import PipelineCheckpoints
from .representation import local_to_global
from .seeding import seed_everything
from .textembed import HashingTextEmbedder, text_similarity_matrix
from .toydata import ToyCorpusSpec, make_toy_corpus


def _config_from_args(args):
    config = PipelineConfig()
    if getattr(args, "config", None):
        config = load_config(args.config, config)
    return config


def _load_checkpoints(args, config, need=()):
    ckpts = PipelineCheckpoints()
    if "align" in need:
        ckpts.alignment = load_alignment_checkpoint(args.align_ckpt, config.alignment)
    if "rqvae" in need:
        ckpts.rqvae = load_rqvae_checkpoint(args.rqvae_ckpt, config.rqvae)
    if "gen" in need:
        ckpts.generator = load_generator_checkpoint(args.gen_ckpt, config.generator)
    if "control" in need:
        ckpts.control = load_control_checkpoint(
            args.control_ckpt, config.control, ckpts.generator,
            config.rqvae.downsample)
    return ckpts


def _cmd_make_toy_data(args):
    config = _config_from_args(args)
    toy = config.toy
    spec = ToyCorpusSpec(
        n_pairs=args.n if args.n is not None else toy.n_pairs,
        families=tuple(f.strip() for f in
                       (args.families or toy.families).split(",") if f.strip()),
        min_length=toy.min_length, max_length=toy.max_length,
        noise_level=toy.noise_level, amplitude=toy.amplitude)
    seed_everything(args.seed)
    samples = make_toy_corpus(spec, seed=args.seed)
    corpus = Corpus(entries=[CorpusEntry(s.entry_id, s.motion, s.annotation,
                                         s.constraint) for s in samples])
    corpus.split = {"train": [e.entry_id for e in corpus.entries]}
    save_corpus(args.out, corpus)
    print(f"wrote {len(corpus)} toy pairs to {args.out}")
    return 0


def _cmd_preprocess(args):
    corpus = ingest_humanml3d(args.humanml3d)
    if args.mirror:
        corpus.entries.extend([mirror_entry(e) for e in list(corpus.entries)])
        for name, ids in corpus.split.items():
            corpus.split[name] = ids + [i + "_M" for i in ids]
    save_corpus(args.out, corpus)
    print(f"ingested {len(corpus)} sequences into {args.out}")
    return 0


def _cmd_annotate(args):
    config = _config_from_args(args)
    threshold = args.keyframe_threshold or config.annotation.keyframe_threshold
    corpus = load_corpus(args.data)
    embedder = HashingTextEmbedder(config.annotation.embed_dim)
    describer = annotation_mod.RuleBasedPoseDescriber()
    if args.annotator == "remote":
        endpoint = args.remote_endpoint or config.annotation.remote_endpoint
        annotator = annotation_mod.RemoteAnnotator(
            endpoint, api_key=os.environ.get("KINMO_API_KEY"))
    else:
        annotator = annotation_mod.StubAnnotator()
    out_dir = os.path.join(args.out or args.data, "annotations")
    os.makedirs(out_dir, exist_ok=True)
    for entry in corpus.entries:
        ann = annotation_mod.annotate_sequence(
            entry.motion, embedder, describer, annotator, threshold=threshold,
            global_texts=entry.annotation.global_texts)
        annotation_mod.save_annotation(
            os.path.join(out_dir, f"{entry.entry_id}.ann"), ann)
    print(f"annotated {len(corpus)} sequences")
    return 0


def _train_pairs(corpus):
    ids = corpus.split.get("train") or [e.entry_id for e in corpus.entries]
    sub = corpus.subset(ids)
    return sub


def _cmd_train_align(args):
    config = _config_from_args(args)
    corpus = _train_pairs(load_corpus(args.data))
    ckpt = train_alignment(corpus.pairs(), config.alignment, seed=args.seed,
                           log_fn=print)
    save_alignment_checkpoint(args.out, ckpt)
    print(f"wrote {args.out}")
    return 0


def _cmd_train_rqvae(args):
    config = _config_from_args(args)
    corpus = _train_pairs(load_corpus(args.data))
    ckpt = train_rqvae([e.motion for e in corpus.entries], config.rqvae,
                       seed=args.seed, log_fn=print)
    save_rqvae_checkpoint(args.out, ckpt)
    print(f"wrote {args.out}")
    return 0


def _cmd_train_gen(args):
    config = _config_from_args(args)
    corpus = _train_pairs(load_corpus(args.data))
    ckpts = _load_checkpoints(args, config, need=("align", "rqvae"))
    grids = [rqvae_encode(e.motion, ckpts.rqvae) for e in corpus.entries]
    ckpt = train_generator(grids, [e.annotation for e in corpus.entries],
                           ckpts.alignment, config.generator,
                           codebook_size=config.rqvae.codebook_size,
                           seed=args.seed, log_fn=print)
    save_generator_checkpoint(args.out, ckpt)
    print(f"wrote {args.out}")
    return 0


def _cmd_train_control(args):
    config = _config_from_args(args)
    corpus = _train_pairs(load_corpus(args.data))
    ckpts = _load_checkpoints(args, config, need=("align", "rqvae", "gen"))
    entries = [e for e in corpus.entries if e.constraint is not None]
    if not entries:
        raise KinmoError("no constraints in corpus; run make-toy-data or add .traj files")
    grids = [rqvae_encode(e.motion, ckpts.rqvae) for e in entries]
    ckpt = train_control(grids, [e.constraint for e in entries],
                         [e.motion for e in entries],
                         [e.annotation for e in entries], ckpts,
                         config.control, seed=args.seed, log_fn=print)
    save_control_checkpoint(args.out, ckpt)
    print(f"wrote {args.out}")
    return 0


_LEVEL_FLAGS = {"g": "g", "gj": "gj", "gji": "gji"}


def _write_generation(args, result):
    save_kmot(args.out, result.motion)
    sidecar = args.out + ".json"
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(result.metadata, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {args.out} (+ {sidecar})")


def _cmd_generate(args):
    config = _config_from_args(args)
    ckpts = _load_checkpoints(args, config, need=("align", "rqvae", "gen"))
    seed_everything(args.seed)
    result = generate(args.text, TemplateReasonerStub(), ckpts, length=args.length,
                      config=config.generator, seed=args.seed,
                      level=_LEVEL_FLAGS[args.level])
    _write_generation(args, result)
    return 0


def _parse_mask_spec(spec, frames, downsample):
    """Frame ranges "a:b,c:d" -> boolean token-column mask (overlap masks)."""
    import math
    tq = math.ceil(frames / downsample)
    mask = np.zeros(tq, dtype=bool)
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        a, _, b = part.partition(":")
        start = int(a) if a else 0
        stop = int(b) if b else frames
        if not 0 <= start < stop <= frames:
            raise KinmoError(f"mask range {part!r} outside [0, {frames})")
        mask[start // downsample: (stop - 1) // downsample + 1] = True
    return mask


def _cmd_edit(args):
    config = _config_from_args(args)
    ckpts = _load_checkpoints(args, config, need=("align", "rqvae", "gen"))
    seed_everything(args.seed)
    motion = load_kmot(args.infile)
    grid = rqvae_encode(motion, ckpts.rqvae)
    mask = _parse_mask_spec(args.mask, motion.frames, config.rqvae.downsample)
    from .annotation import HierarchicalAnnotation
    joint, inter = TemplateReasonerStub().expand(args.text)
    ann = HierarchicalAnnotation([args.text], joint, inter)
    edited = edit_infill(grid, mask, ann, ckpts, config=config.generator,
                         seed=args.seed)
    from .generation import rqvae_decode
    out_motion = rqvae_decode(edited, ckpts.rqvae)
    save_kmot(args.out, out_motion)
    with open(args.out + ".json", "w", encoding="utf-8") as f:
        json.dump({"global_text": args.text, "seed": args.seed,
                   "masked_columns": [int(i) for i in np.where(mask)[0]]},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_control_generate(args):
    config = _config_from_args(args)
    ckpts = _load_checkpoints(args, config, need=("align", "rqvae", "gen", "control"))
    seed_everything(args.seed)
    constraint = load_constraint(args.traj, frames=args.length)
    result = controlled_generate(args.text, constraint, ckpts, seed=args.seed,
                                 config=config.generator)
    _write_generation(args, result)
    return 0


_PROTOCOLS = {
    "all": "All",
    "threshold": "AllThreshold",
    "dissimilar": "DissimilarSubset",
    "small": "SmallBatches",
}


def _retrieval_features(corpus, align):
    texts = [e.annotation.global_texts[0] for e in corpus.entries]
    z_text = np.stack([align.embed_text(e.annotation, "interaction")
                       for e in corpus.entries])
    z_motion = np.stack([align.embed_motion(e.motion) for e in corpus.entries])
    sim = (z_text / np.linalg.norm(z_text, axis=1, keepdims=True)) @ \
          (z_motion / np.linalg.norm(z_motion, axis=1, keepdims=True)).T
    return sim, text_similarity_matrix(texts)


def _cmd_retrieve(args):
    config = _config_from_args(args)
    corpus = load_corpus(args.data)
    ckpts = _load_checkpoints(args, config, need=("align",))
    sim, text_sims = _retrieval_features(corpus, ckpts.alignment)
    protocol = RetrievalProtocol(
        variant=_PROTOCOLS[args.protocol],
        threshold=config.eval.retrieval_threshold,
        subset_size=min(config.eval.dissimilar_subset, sim.shape[0]),
        batch_size=config.eval.small_batch, seed=args.seed)
    t2m, m2t = retrieval_report(sim, protocol, text_sims)
    values = {}
    for rep in (t2m, m2t):
        prefix = "t2m" if rep.direction == "text->motion" else "m2t"
        for key, val in rep.as_flat_dict().items():
            values[f"{prefix}/{key}"] = val
    write_report(args.report, values,
                 metadata={"protocol": protocol.variant, "n": sim.shape[0],
                           "medr_rule": "ranks pooled, then median"})
    print(f"wrote {args.report}")
    return 0


def _load_motion_dir(path):
    files = sorted(f for f in os.listdir(path) if f.endswith(".kmot"))
    motions = {os.path.splitext(f)[0]: load_kmot(os.path.join(path, f))
               for f in files}
    return motions


def _cmd_eval(args):
    config = _config_from_args(args)
    if args.suite == "retrieval":
        return _cmd_retrieve(args)

    if args.suite == "generation":
        ckpts = _load_checkpoints(args, config, need=("align",))
        preds = _load_motion_dir(args.pred)
        ref = load_corpus(args.ref)
        texts = {}
        for name in preds:
            sidecar = os.path.join(args.pred, name + ".kmot.json")
            if os.path.exists(sidecar):
                with open(sidecar, "r", encoding="utf-8") as f:
                    texts[name] = json.load(f).get("global_text", "")
        align = ckpts.alignment
        pred_feats = np.stack([align.embed_motion(m) for m in preds.values()])
        ref_feats = np.stack([align.embed_motion(e.motion) for e in ref.entries])
        values = {}
        if len(preds) >= 2 and len(ref.entries) >= 2:
            values["FID"] = fid_from_features(ref_feats, pred_feats)
        if texts and len(texts) == len(preds):
            from .annotation import HierarchicalAnnotation
            from .generation.reasoner import TemplateReasonerStub as _Stub
            stub = _Stub()
            anns = {}
            for name, text in texts.items():
                joint, inter = stub.expand(text)
                anns[name] = HierarchicalAnnotation([text], joint, inter)
            text_feats = np.stack([align.embed_text(anns[n], "global")
                                   for n in preds])
            pool = min(config.eval.r_precision_pool, len(preds))
            if len(preds) >= pool >= 2:
                top1, top2, top3 = r_precision(text_feats, pred_feats, pool=pool,
                                               seed=args.seed)
                values.update({"R-Precision-Top1": top1, "R-Precision-Top2": top2,
                               "R-Precision-Top3": top3})
            values["MM-Dist"] = mm_dist(text_feats, pred_feats)
        d_pairs = min(config.eval.diversity_pairs, len(preds) // 2)
        if d_pairs >= 1:
            values["Diversity"] = diversity(pred_feats, d_pairs=d_pairs,
                                            seed=args.seed)
        groups = {}
        for i, name in enumerate(preds):
            stem = name.rsplit("_r", 1)[0]
            groups.setdefault(stem, []).append(i)
        repeats = [idx for idx in groups.values() if len(idx) >= 2]
        if repeats:
            reps = min(len(idx) for idx in repeats)
            block = np.stack([pred_feats[idx[:reps]] for idx in repeats])
            values["MModality"] = mmodality(block)
        else:
            values["MModality"] = 0.0
        write_report(args.report, values,
                     metadata={"n_pred": len(preds), "n_ref": len(ref.entries),
                               "feature_extractor": "alignment encoders"})
        print(f"wrote {args.report}")
        return 0

    if args.suite == "control":
        ref = load_corpus(args.ref)
        preds = _load_motion_dir(args.pred)
        pred_list, target_list, mask_list = [], [], []
        for name, motion in preds.items():
            entry = ref.by_id(name)
            if entry.constraint is None:
                continue
            pred_list.append(motion)
            target_list.append(entry.motion)
            mask_list.append(entry.constraint.mask)
        report = control_metrics(pred_list, target_list, mask_list,
                                 threshold=config.eval.control_threshold)
        write_report(args.report, report.as_flat_dict(),
                     metadata={"threshold_m": config.eval.control_threshold,
                               "n": len(pred_list)})
        print(f"wrote {args.report}")
        return 0

    # editing suite: HTMA-S of each edited motion against its target caption
    ckpts = _load_checkpoints(args, config, need=("align",))
    preds = _load_motion_dir(args.pred)
    scores = {}
    for name, motion in preds.items():
        sidecar = os.path.join(args.pred, name + ".kmot.json")
        txt_file = os.path.join(args.pred, name + ".txt")
        if os.path.exists(sidecar):
            with open(sidecar, "r", encoding="utf-8") as f:
                target = json.load(f)["global_text"]
        elif os.path.exists(txt_file):
            with open(txt_file, "r", encoding="utf-8") as f:
                target = f.read().strip()
        else:
            continue
        scores[name] = htma_s(motion, target, ckpts.alignment)
    if not scores:
        raise KinmoError("no edited motions with target texts found")
    values = {"HTMA-S": float(np.mean(list(scores.values())))}
    values.update({f"HTMA-S/{k}": v for k, v in scores.items()})
    write_report(args.report, values, metadata={"n": len(scores)})
    print(f"wrote {args.report}")
    return 0


def _cmd_export_anim(args):
    motion = load_kmot(args.infile)
    world = local_to_global(motion)
    with open(args.out, "w", encoding="utf-8") as f:
        for t in range(world.shape[0]):
            coords = " ".join(f"{v:.6f}" for v in world[t].reshape(-1))
            f.write(f"{t} {coords}\n")
    print(f"wrote {args.out} ({world.shape[0]} frames)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="kinmo",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="key=value config file")
        return p

    p = add("make-toy-data", _cmd_make_toy_data, help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--families", default=None)
    p.add_argument("--out", required=True)

    p = add("preprocess", _cmd_preprocess, help="ingest a HumanML3D-layout directory")
    p.add_argument("--humanml3d", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mirror", action="store_true",
                   help="append left/right mirrored copies")

    p = add("annotate", _cmd_annotate, help="write hierarchical annotations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--keyframe-threshold", type=float, default=None)
    p.add_argument("--annotator", choices=("stub", "remote"), default="stub")
    p.add_argument("--remote-endpoint", default=None)

    for name, fn in (("train-align", _cmd_train_align),
                     ("train-rqvae", _cmd_train_rqvae)):
        p = add(name, fn, help=f"{name.replace('-', ' ')} on a corpus")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)

    p = add("train-gen", _cmd_train_gen, help="train the masked generator")
    p.add_argument("--data", required=True)
    p.add_argument("--align-ckpt", required=True)
    p.add_argument("--rqvae-ckpt", required=True)
    p.add_argument("--out", required=True)

    p = add("train-control", _cmd_train_control, help="train the control branch")
    p.add_argument("--data", required=True)
    p.add_argument("--align-ckpt", required=True)
    p.add_argument("--rqvae-ckpt", required=True)
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--out", required=True)

    p = add("generate", _cmd_generate, help="text-to-motion generation")
    p.add_argument("--text", required=True)
    p.add_argument("--length", type=int, default=40)
    p.add_argument("--level", choices=tuple(_LEVEL_FLAGS), default="gji")
    p.add_argument("--align-ckpt", required=True)
    p.add_argument("--rqvae-ckpt", required=True)
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--out", required=True)

    p = add("edit", _cmd_edit, help="mask-based motion editing")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mask", required=True, help='frame ranges "a:b,c:d"')
    p.add_argument("--text", required=True)
    p.add_argument("--align-ckpt", required=True)
    p.add_argument("--rqvae-ckpt", required=True)
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--out", required=True)

    p = add("control-generate", _cmd_control_generate,
            help="trajectory-controlled generation")
    p.add_argument("--text", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--align-ckpt", required=True)
    p.add_argument("--rqvae-ckpt", required=True)
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--control-ckpt", required=True)
    p.add_argument("--out", required=True)

    p = add("retrieve", _cmd_retrieve, help="text-motion retrieval report")
    p.add_argument("--data", required=True)
    p.add_argument("--align-ckpt", required=True)
    p.add_argument("--protocol", choices=tuple(_PROTOCOLS), default="all")
    p.add_argument("--report", required=True)

    p = add("eval", _cmd_eval, help="metric suites over prediction directories")
    p.add_argument("--suite", choices=("retrieval", "generation", "control",
                                       "editing"), required=True)
    p.add_argument("--pred", default=None)
    p.add_argument("--ref", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--align-ckpt", default=None)
    p.add_argument("--protocol", choices=tuple(_PROTOCOLS), default="all")
    p.add_argument("--report", required=True)

    p = add("export-anim", _cmd_export_anim, help="KMOT -> text keypoint frames")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    return parser


def run_command(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except KinmoError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
