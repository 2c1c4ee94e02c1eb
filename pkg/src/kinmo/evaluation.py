"""Retrieval protocols, generation metrics, control metrics, and editing score.

Rank convention everywhere: candidates sort by score (similarity descending or
distance ascending) with ties broken by index order, lower index first; the
reported rank of the ground truth is its 1-based position in that order.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, InsufficientSamples, InvalidCovariance
from .representation import local_to_global
from .skeleton import DEFAULT_SKELETON

RECALL_KS = (1, 2, 3, 5, 10)


@dataclass
class RetrievalProtocol:
    variant: str = "All"          # All | AllThreshold | DissimilarSubset | SmallBatches
    threshold: float = 0.8
    subset_size: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("All", "AllThreshold", "DissimilarSubset", "SmallBatches"):
            raise ValueError(f"unknown protocol variant {self.variant!r}")
        if self.threshold <= 0 or self.subset_size <= 0 or self.batch_size <= 0:
            raise ValueError("protocol parameters must be positive")


@dataclass
class RetrievalReport:
    direction: str                # "text->motion" | "motion->text"
    recall_at: dict               # k -> percentage
    med_rank: float

    def as_flat_dict(self):
        out = {f"R@{k}": v for k, v in self.recall_at.items()}
        out["MedR"] = self.med_rank
        return out


def gt_ranks(scores, descending=True):
    """1-based rank of entry (i, i) within row i, ties to lower index."""
    n = scores.shape[0]
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = scores[i]
        gt = row[i]
        if descending:
            better = np.count_nonzero(row > gt)
            tied_before = np.count_nonzero(row[:i] == gt)
        else:
            better = np.count_nonzero(row < gt)
            tied_before = np.count_nonzero(row[:i] == gt)
        ranks[i] = 1 + better + tied_before
    return ranks


def _ranks_for_matrix(sim):
    t2m = gt_ranks(sim, descending=True)
    m2t = gt_ranks(sim.T, descending=True)
    return t2m, m2t


def _report_from_ranks(ranks, direction):
    recall = {k: 100.0 * float(np.mean(ranks <= k)) for k in RECALL_KS}
    return RetrievalReport(direction=direction, recall_at=recall,
                           med_rank=float(np.median(ranks)))


def retrieval_report(similarity, protocol=None, text_sims=None):
    """Recall@k and median rank for both retrieval directions.

    AllThreshold counts a retrieval as correct once any candidate whose text
    similarity to the ground truth reaches the threshold has been returned;
    DissimilarSubset keeps the `subset_size` items least similar to any other
    item; SmallBatches pools ranks over disjoint seeded batches.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    protocol = protocol or RetrievalProtocol()
    n = sim.shape[0]

    if protocol.variant == "All":
        t2m, m2t = _ranks_for_matrix(sim)
    elif protocol.variant == "AllThreshold":
        if text_sims is None:
            raise ValueError("AllThreshold protocol needs text_sims")
        ts = np.asarray(text_sims, dtype=np.float64)
        t2m = np.empty(n, dtype=np.int64)
        m2t = np.empty(n, dtype=np.int64)
        for i in range(n):
            order = np.argsort(-sim[i], kind="stable")
            hits = ts[order, i] >= protocol.threshold
            t2m[i] = 1 + int(np.argmax(hits)) if hits.any() else n + 1
            order = np.argsort(-sim[:, i], kind="stable")
            hits = ts[order, i] >= protocol.threshold
            m2t[i] = 1 + int(np.argmax(hits)) if hits.any() else n + 1
    elif protocol.variant == "DissimilarSubset":
        if text_sims is None:
            raise ValueError("DissimilarSubset protocol needs text_sims")
        if n < protocol.subset_size:
            raise InsufficientSamples(
                f"need {protocol.subset_size} items, have {n}")
        ts = np.asarray(text_sims, dtype=np.float64).copy()
        np.fill_diagonal(ts, -np.inf)
        score = ts.max(axis=1)
        keep = np.argsort(score, kind="stable")[: protocol.subset_size]
        keep = np.sort(keep)
        t2m, m2t = _ranks_for_matrix(sim[np.ix_(keep, keep)])
    else:  # SmallBatches
        if n < protocol.batch_size:
            raise InsufficientSamples(f"need {protocol.batch_size} items, have {n}")
        rng = np.random.default_rng(protocol.seed)
        perm = rng.permutation(n)
        t2m_all, m2t_all = [], []
        for start in range(0, n - protocol.batch_size + 1, protocol.batch_size):
            idx = np.sort(perm[start:start + protocol.batch_size])
            sub = sim[np.ix_(idx, idx)]
            a, b = _ranks_for_matrix(sub)
            t2m_all.append(a)
            m2t_all.append(b)
        t2m = np.concatenate(t2m_all)
        m2t = np.concatenate(m2t_all)

    return (_report_from_ranks(t2m, "text->motion"),
            _report_from_ranks(m2t, "motion->text"))


# -- generation metrics --

def _sym_sqrt_trace(cov1, cov2, clamp_tol=-1e-8):
    """tr((cov1 cov2)^(1/2)) via eigen-decompositions of symmetric PSD forms."""
    w1, v1 = np.linalg.eigh(cov1)
    if w1.min() < clamp_tol:
        raise InvalidCovariance(f"covariance eigenvalue {w1.min()} below tolerance")
    s1 = (v1 * np.sqrt(np.clip(w1, 0.0, None))) @ v1.T
    inner = s1 @ cov2 @ s1
    inner = (inner + inner.T) / 2.0
    w, _ = np.linalg.eigh(inner)
    if w.min() < clamp_tol:
        raise InvalidCovariance(f"product eigenvalue {w.min()} below tolerance")
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid(mean1, cov1, mean2, cov2):
    """Frechet distance between two Gaussian feature fits."""
    mean1, mean2 = np.asarray(mean1, dtype=np.float64), np.asarray(mean2, dtype=np.float64)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    for cov in (cov1, cov2):
        if np.abs(cov - cov.T).max() > 1e-8:
            raise InvalidCovariance("covariance must be symmetric")
    diff = float(((mean1 - mean2) ** 2).sum())
    return diff + float(np.trace(cov1) + np.trace(cov2)) - 2.0 * _sym_sqrt_trace(cov1, cov2)


def gaussian_fit(features):
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < 2:
        raise InsufficientSamples("need at least 2 samples for a Gaussian fit")
    return features.mean(axis=0), np.cov(features, rowvar=False)


def fid_from_features(features1, features2):
    m1, c1 = gaussian_fit(features1)
    m2, c2 = gaussian_fit(features2)
    return fid(m1, c1, m2, c2)


def r_precision(text_feats, motion_feats, pool=32, seed=0):
    """Top-1/2/3 fractions over disjoint pools, Euclidean matching."""
    t = np.asarray(text_feats, dtype=np.float64)
    m = np.asarray(motion_feats, dtype=np.float64)
    n = t.shape[0]
    if n < pool:
        raise InsufficientSamples(f"need at least {pool} pairs, have {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    tops = np.zeros(3)
    batches = 0
    for start in range(0, n - pool + 1, pool):
        idx = perm[start:start + pool]
        d = np.linalg.norm(t[idx][:, None, :] - m[idx][None, :, :], axis=-1)
        ranks = gt_ranks(d, descending=False)
        for ki, k in enumerate((1, 2, 3)):
            tops[ki] += float(np.mean(ranks <= k))
        batches += 1
    tops /= batches
    return float(tops[0]), float(tops[1]), float(tops[2])


def mm_dist(text_feats, motion_feats):
    """Mean Euclidean distance between matched text/motion features."""
    t = np.asarray(text_feats, dtype=np.float64)
    m = np.asarray(motion_feats, dtype=np.float64)
    if t.shape != m.shape:
        raise ValueError("matched features must share a shape")
    return float(np.mean(np.linalg.norm(t - m, axis=-1)))


def diversity(features, d_pairs=30, seed=0):
    """Mean distance over d_pairs disjoint random feature pairs."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[0] < 2 * d_pairs:
        raise InsufficientSamples(f"need {2 * d_pairs} samples, have {f.shape[0]}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(f.shape[0])
    a = f[perm[:d_pairs]]
    b = f[perm[d_pairs:2 * d_pairs]]
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def mmodality(per_caption_features):
    """Mean pairwise distance among same-caption repeats, averaged over captions."""
    f = np.asarray(per_caption_features, dtype=np.float64)
    if f.ndim != 3 or f.shape[1] < 2:
        raise InsufficientSamples("need (captions, repeats >= 2, dim) features")
    reps = f.shape[1]
    dists = []
    for c in range(f.shape[0]):
        block = f[c]
        acc = [np.linalg.norm(block[i] - block[j])
               for i in range(reps) for j in range(i + 1, reps)]
        dists.append(np.mean(acc))
    return float(np.mean(dists))


@dataclass
class GenerationReport:
    fid: float
    r_precision_top1: float
    r_precision_top2: float
    r_precision_top3: float
    mm_dist: float
    diversity: float
    mmodality: float
    metadata: dict = field(default_factory=dict)

    def as_flat_dict(self):
        return {
            "FID": self.fid,
            "R-Precision-Top1": self.r_precision_top1,
            "R-Precision-Top2": self.r_precision_top2,
            "R-Precision-Top3": self.r_precision_top3,
            "MM-Dist": self.mm_dist,
            "Diversity": self.diversity,
            "MModality": self.mmodality,
        }


# -- control metrics --

@dataclass
class ControlReport:
    traj_err: float
    loc_err: float
    avg_err: float

    def as_flat_dict(self):
        return {"Traj-err": self.traj_err, "Loc-err": self.loc_err,
                "Avg-err": self.avg_err}


def control_metrics(preds, targets, masks, threshold=0.5, skeleton=DEFAULT_SKELETON):
    """Trajectory / location / average error at a global-position threshold.

    Accepts single motions or lists. A sample's trajectory fails if any active
    joint-frame error exceeds the threshold; location and average errors pool
    active joint-frames across samples.
    """
    if not isinstance(preds, (list, tuple)):
        preds, targets, masks = [preds], [targets], [masks]
    total_active = sum(int(np.asarray(m).sum()) for m in masks)
    if total_active == 0:
        raise EmptyMask("control metrics need at least one active mask entry")

    failed = 0
    pooled = []
    for pred, target, mask in zip(preds, targets, masks):
        mask = np.asarray(mask, dtype=bool)
        if mask.sum() == 0:
            continue
        gp = local_to_global(pred, skeleton)
        gt = local_to_global(target, skeleton)
        err = np.linalg.norm(gp - gt, axis=-1)[mask]
        pooled.append(err)
        if np.any(err > threshold):
            failed += 1
    pooled = np.concatenate(pooled)
    with_mask = sum(1 for m in masks if np.asarray(m).sum() > 0)
    return ControlReport(
        traj_err=failed / with_mask,
        loc_err=float(np.mean(pooled > threshold)),
        avg_err=float(np.mean(pooled)),
    )


def htma_s(edited_motion, target_global_text, alignment_checkpoint):
    """Cosine between the motion embedding and the target caption embedding."""
    from .annotation import HierarchicalAnnotation
    from .skeleton import ALL_PAIRS, GROUP_ORDER

    placeholder_j = {g: "unused" for g in GROUP_ORDER}
    placeholder_i = {p: "unused" for p in ALL_PAIRS}
    ann = HierarchicalAnnotation([target_global_text], placeholder_j, placeholder_i)
    zt = alignment_checkpoint.embed_text(ann, "global")
    zm = alignment_checkpoint.embed_motion(edited_motion)
    denom = np.linalg.norm(zt) * np.linalg.norm(zm)
    return float(zt @ zm / denom)


def write_report(path, values, metadata=None):
    """Flat JSON report with deterministic key order."""
    payload = dict(values)
    if metadata:
        payload["metadata"] = metadata
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
