"""Character error rate over Unicode scalar values.

CER is micro-averaged: total edit operations divided by total reference
characters, reported as a percentage. Distances are computed over code points,
not bytes or grapheme clusters, so results are reproducible across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyReference


def edit_distance(a: str, b: str) -> int:
    """Minimal insert/delete/substitute count (Levenshtein), two-row DP."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(
                min(
                    prev[j] + 1,  # delete
                    cur[j - 1] + 1,  # insert
                    prev[j - 1] + (ca != cb),  # substitute
                )
            )
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class CerReport:
    distances: tuple[int, ...]
    total_edits: int
    total_reference_chars: int

    @property
    def item_count(self) -> int:
        return len(self.distances)

    @property
    def cer(self) -> float:
        """Corpus CER as a fraction in [0, ...]; 0 iff all pairs are equal."""
        if self.total_reference_chars == 0:
            return 0.0
        return self.total_edits / self.total_reference_chars

    @property
    def cer_percent(self) -> float:
        return 100.0 * self.cer


def cer(pairs: Sequence[tuple[str, str]]) -> CerReport:
    """Corpus CER for (hypothesis, reference) pairs; references must be non-empty."""
    distances = []
    ref_chars = 0
    for hypothesis, reference in pairs:
        if not reference:
            raise EmptyReference("reference string must be non-empty")
        distances.append(edit_distance(hypothesis, reference))
        ref_chars += len(reference)
    return CerReport(
        distances=tuple(distances),
        total_edits=sum(distances),
        total_reference_chars=ref_chars,
    )
