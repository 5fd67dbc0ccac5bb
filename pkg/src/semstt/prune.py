"""Redundancy removal: drop semantically empty decoder steps.

Speech-side sequences are long; their semantic content is a handful of
word-aligned steps. Given per-step argmax token ids, pruning removes the
first EOS step together with everything after it (the tail carries no
content), then removes UNK and PAD steps in front of it. The surviving
steps, in original order, are the concentrated sequence that actually
gets transmitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, PAD_ID, UNK_ID
from .errors import ShapeError


@dataclass(frozen=True)
class PruneReport:
    """Where each of the q raw steps went."""

    raw_len: int
    kept_len: int
    cut_by_eos: int       # steps at and after the first EOS
    cut_by_specials: int  # UNK/PAD steps before the first EOS

    def __post_init__(self):
        if min(self.raw_len, self.kept_len, self.cut_by_eos, self.cut_by_specials) < 0:
            raise ShapeError("prune counts must be non-negative")
        if self.kept_len + self.cut_by_eos + self.cut_by_specials != self.raw_len:
            raise ShapeError("prune counts must partition the raw steps")

    @property
    def saved_fraction(self) -> float:
        return (self.raw_len - self.kept_len) / self.raw_len if self.raw_len else 0.0

    @property
    def eos_fraction(self) -> float:
        return self.cut_by_eos / self.raw_len if self.raw_len else 0.0

    @property
    def special_fraction(self) -> float:
        return self.cut_by_specials / self.raw_len if self.raw_len else 0.0


def prune_steps(token_ids) -> tuple[np.ndarray, PruneReport]:
    """Indices of surviving steps (strictly increasing) plus the report."""
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    q = ids.size
    eos_hits = np.flatnonzero(ids == EOS_ID)
    cut_from = int(eos_hits[0]) if eos_hits.size else q
    head = ids[:cut_from]
    kept = np.flatnonzero((head != UNK_ID) & (head != PAD_ID))
    return kept, PruneReport(q, kept.size, q - cut_from, cut_from - kept.size)


def prune(token_ids, latents: np.ndarray):
    """Apply the step rule to aligned latent vectors: (q, d) -> (c, d).

    Returns (kept latents, kept step indices, report).
    """
    latents = np.asarray(latents)
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    if latents.ndim != 2 or latents.shape[0] != ids.size:
        raise ShapeError(f"latents {latents.shape} do not align with {ids.size} steps")
    kept, report = prune_steps(ids)
    return latents[kept], kept, report


def prune_transcript(token_ids) -> list:
    """The same rule on a bare token sequence; returns surviving ids."""
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    kept, _ = prune_steps(ids)
    return ids[kept].tolist()


def savings_stats(reports) -> dict:
    """Corpus-level savings: mean per-sentence fractions plus step totals."""
    reports = list(reports)
    if not reports:
        raise ShapeError("savings_stats: empty report list")
    return {
        "eos_fraction": float(np.mean([r.eos_fraction for r in reports])),
        "special_fraction": float(np.mean([r.special_fraction for r in reports])),
        "saved_fraction": float(np.mean([r.saved_fraction for r in reports])),
        "raw_steps": int(sum(r.raw_len for r in reports)),
        "kept_steps": int(sum(r.kept_len for r in reports)),
    }
