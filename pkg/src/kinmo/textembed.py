"""Deterministic bag-of-words text embedder (unit vectors, hashing trick).

Stand-in for a sentence-embedding backbone: stable across processes and
platforms because bucketing uses sha256 rather than Python's salted hash.
"""

import hashlib
import re

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


def _bucket(token, dim):
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    idx = int.from_bytes(digest[:4], "little") % dim
    sign = 1.0 if digest[4] % 2 == 0 else -1.0
    return idx, sign


class HashingTextEmbedder:
    """embed(text) -> unit vector of dimension `dim`; deterministic per input."""

    def __init__(self, dim=64):
        self.dim = dim

    def embed(self, text):
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            idx, sign = _bucket(tok, self.dim)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm

    def embed_many(self, texts):
        return np.stack([self.embed(t) for t in texts], axis=0)


def text_similarity_matrix(texts, dim=64):
    """Pairwise cosine similarities of hashed text embeddings: (N, N)."""
    emb = HashingTextEmbedder(dim).embed_many(texts)
    return emb @ emb.T
