"""Transcript metrics: word error rate and a sentence-similarity score.

WER is the minimal token edit distance normalized by reference length,
with the (S, D, I) split recovered from a backtrace. Similarity is the
cosine between deterministic hashed bag-of-words embeddings, clamped to
[0, 1]; it is monotone in lexical overlap and fully reproducible, but it
is a stand-in, not a learned sentence encoder, and is labeled as such in
reports.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

EMBED_DIM = 256


@dataclass(frozen=True)
class WerBreakdown:
    """Edit counts for one (reference, hypothesis) pair."""

    substitutions: int
    deletions: int
    insertions: int
    ref_length: int

    @property
    def total_edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.total_edits / self.ref_length


def wer(ref, hyp) -> WerBreakdown:
    """Minimal-edit WER between token sequences (any hashable tokens).

    Ties between edit scripts of equal cost are broken by preferring a
    substitution over a delete+insert pair, then deletion over insertion,
    so the decomposition is deterministic.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    if n == 0:
        raise ShapeError("wer: empty reference, N=0 is undefined")

    # cost[i, j] = edits turning ref[:i] into hyp[:j]; moves: 0=match,
    # 1=substitute, 2=delete (drop ref token), 3=insert (extra hyp token)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    move = np.zeros((n + 1, m + 1), dtype=np.int8)
    cost[:, 0] = np.arange(n + 1)
    move[1:, 0] = 2
    cost[0, :] = np.arange(m + 1)
    move[0, 1:] = 3
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                cost[i, j] = cost[i - 1, j - 1]
                move[i, j] = 0
                continue
            sub = cost[i - 1, j - 1] + 1
            dele = cost[i - 1, j] + 1
            ins = cost[i, j - 1] + 1
            best = min(sub, dele, ins)
            cost[i, j] = best
            move[i, j] = 1 if sub == best else (2 if dele == best else 3)

    s = d = ins_count = 0
    i, j = n, m
    while i > 0 or j > 0:
        mv = move[i, j]
        if mv == 0:
            i, j = i - 1, j - 1
        elif mv == 1:
            s += 1
            i, j = i - 1, j - 1
        elif mv == 2:
            d += 1
            i -= 1
        else:
            ins_count += 1
            j -= 1
    return WerBreakdown(s, d, ins_count, n)


def corpus_wer(pairs) -> float:
    """Pooled WER over (ref, hyp) pairs: total edits / total reference length."""
    edits = length = 0
    for ref, hyp in pairs:
        b = wer(ref, hyp)
        edits += b.total_edits
        length += b.ref_length
    if length == 0:
        raise ShapeError("corpus_wer: no reference tokens")
    return edits / length


def _bucket(token) -> int:
    digest = hashlib.blake2b(str(token).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % EMBED_DIM


def embed_sentence(tokens) -> np.ndarray:
    """Hashed bag-of-words embedding: token counts scattered into a fixed
    number of buckets, then l2-normalized. Empty input gives the zero vector."""
    v = np.zeros(EMBED_DIM)
    for tok in tokens:
        v[_bucket(tok)] += 1.0
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def similarity(ref, hyp) -> float:
    """Cosine of hashed bag-of-words embeddings, clamped to [0, 1].

    Both sentences empty scores 1 (nothing was lost); exactly one empty
    scores 0.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref and not hyp:
        return 1.0
    if not ref or not hyp:
        return 0.0
    return float(np.clip(np.dot(embed_sentence(ref), embed_sentence(hyp)), 0.0, 1.0))
