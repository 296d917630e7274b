"""Aggregation of rule/neural/LLM suggestions into one presentation.

Forms are compared after NFC normalization and trimming (several target
scripts have combining-character variants; byte comparison would split
identical forms). Converging sources yield a single high-confidence
suggestion; disagreement yields a source-tagged multiple-choice list.
"""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Optional, Sequence

from .domain import Source, Suggestion
from .errors import DuplicateSource

# linguist-authored patterns are the only audited source, so Rule wins ties
_SOURCE_PRIORITY = {Source.RULE: 0, Source.NEURAL: 1, Source.LLM: 2}

SOURCE_LABELS = {Source.RULE: "RULE", Source.NEURAL: "NEURAL", Source.LLM: "LLM"}


def _normalize(form: str) -> str:
    return unicodedata.normalize("NFC", form.strip())


@dataclass(frozen=True)
class ChoiceOption:
    form: str
    sources: frozenset[Source]
    score: float  # confidence of the neural suggestion in this group, if any


@dataclass(frozen=True)
class Presentation:
    """Either unanimous (one normalized form from all contributing sources)
    or a choice list; an empty choice list signals manual elicitation."""

    options: tuple[ChoiceOption, ...]
    unanimous: bool

    @property
    def form(self) -> Optional[str]:
        return self.options[0].form if self.unanimous else None


def aggregate(suggestions: Sequence[Suggestion]) -> Presentation:
    """Group up to three single-source suggestions by normalized form.

    One distinct form: unanimous, high confidence. Several: choice options
    ordered by (agreeing sources desc, neural confidence desc, source
    priority Rule > Neural > LLM). No suggestions: empty choice.
    """
    seen_sources: set[Source] = set()
    for s in suggestions:
        if s.source in seen_sources:
            raise DuplicateSource(f"two suggestions from {s.source.value}")
        if s.source not in _SOURCE_PRIORITY:
            raise ValueError(f"{s.source.value} is not a suggestion source")
        seen_sources.add(s.source)

    groups: dict[str, list[Suggestion]] = {}
    for s in suggestions:
        groups.setdefault(_normalize(s.form), []).append(s)

    options = []
    for form, members in groups.items():
        neural = next((m for m in members if m.source is Source.NEURAL), None)
        options.append(
            ChoiceOption(
                form=form,
                sources=frozenset(m.source for m in members),
                score=neural.confidence if neural else 0.0,
            )
        )
    options.sort(
        key=lambda o: (
            -len(o.sources),
            -o.score,
            min(_SOURCE_PRIORITY[s] for s in o.sources),
        )
    )
    return Presentation(options=tuple(options), unanimous=len(options) == 1)


@dataclass(frozen=True)
class DisplayRecord:
    form: str
    labels: tuple[str, ...]
    high_confidence: bool


def tag_sources(presentation: Presentation) -> list[DisplayRecord]:
    """One display record per option, carrying machine-readable source labels."""
    records = []
    for option in presentation.options:
        labels = tuple(
            SOURCE_LABELS[s]
            for s in sorted(option.sources, key=lambda s: _SOURCE_PRIORITY[s])
        )
        records.append(
            DisplayRecord(
                form=option.form,
                labels=labels,
                high_confidence=presentation.unanimous,
            )
        )
    return records
