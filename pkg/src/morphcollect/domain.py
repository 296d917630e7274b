"""Core entities shared by every other module.

Value types are frozen dataclasses: safe to share across threads, compared by
value. Workflow state changes produce new ``WordformEntry`` instances rather
than mutating in place.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from . import unimorph
from .errors import EmptyInput, NoPosTag, UnknownVariety


class Status(enum.Enum):
    EMPTY = "Empty"
    SUGGESTED = "Suggested"
    SUBMITTED = "Submitted"
    VERIFIED = "Verified"
    FLAGGED = "Flagged"
    RESOLVED = "Resolved"


class Source(enum.Enum):
    RULE = "Rule"
    NEURAL = "Neural"
    LLM = "LLM"
    HUMAN = "Human"
    NONE = "None"


class Role(enum.Enum):
    LINGUIST = "Linguist"
    SPEAKER = "Speaker"


class Expertise(enum.Enum):
    EXPERT = "Expert"
    NON_EXPERT = "NonExpert"


@dataclass(frozen=True)
class FeatureSet:
    """Canonical bundle of UniMorph tags identifying a paradigm cell.

    Identity is the tag tuple alone; two feature sets are equal iff their
    canonical ``;``-joined serializations are byte-equal. Aliases are
    display-only community labels and never affect equality or export.
    """

    tags: tuple[str, ...]
    aliases: dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    def canonical(self) -> str:
        return ";".join(self.tags)

    def __str__(self) -> str:
        return self.canonical()


def canonicalize_featureset(
    tags: Iterable[str], aliases: Optional[dict[str, str]] = None
) -> FeatureSet:
    """Order-normalize a tag list: recognized POS tag first, duplicates dropped,
    remaining tags in input order.

    Raises EmptyInput on an empty list and NoPosTag when no tag is in the
    bundled POS allowlist.
    """
    tag_list = [t.strip() for t in tags if t and t.strip()]
    if not tag_list:
        raise EmptyInput("feature set needs at least one tag")
    seen: set[str] = set()
    deduped: list[str] = []
    for t in tag_list:
        if t not in seen:
            seen.add(t)
            deduped.append(t)
    pos = next((t for t in deduped if unimorph.is_pos(t)), None)
    if pos is None:
        raise NoPosTag(f"no UniMorph POS tag among {deduped!r}")
    ordered = [pos] + [t for t in deduped if t != pos]
    return FeatureSet(tags=tuple(ordered), aliases=dict(aliases or {}))


@dataclass(frozen=True)
class Variety:
    id: int
    name: str
    meta_language: str = "English"
    parent_variety: Optional[int] = None
    rtl: bool = False

    def __post_init__(self):
        if not self.name:
            raise ValueError("variety name must be non-empty")


@dataclass(frozen=True)
class InflectionClass:
    id: int
    variety: int
    name: str
    pos: str


@dataclass(frozen=True)
class Slot:
    features: FeatureSet
    pattern: Optional[str] = None  # template source text, parsed on use
    priority: int = 0


@dataclass(frozen=True)
class ParadigmStructure:
    id: int
    inflection_class: int
    name: str
    slots: tuple[Slot, ...]
    layer_refs: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.slots:
            raise ValueError("paradigm structure needs at least one slot")


@dataclass(frozen=True)
class ReusableMorpheme:
    fragment: str
    features: FeatureSet


@dataclass(frozen=True)
class ReusableLayer:
    id: int
    variety: int
    name: str
    morphemes: tuple[ReusableMorpheme, ...]

    def __post_init__(self):
        if not self.morphemes:
            raise ValueError("layer needs at least one morpheme")
        feats = [m.features.canonical() for m in self.morphemes]
        if len(set(feats)) != len(feats):
            raise ValueError("layer morpheme feature sets must be pairwise distinct")


@dataclass(frozen=True)
class Lemma:
    id: int
    variety: int
    citation_form: str
    gloss: str
    inflection_class: int
    stems: dict[int, str] = field(default_factory=dict, compare=False, hash=False)
    priority: int = 0

    def __post_init__(self):
        if not self.citation_form:
            raise ValueError("citation form must be non-empty")
        if self.stems:
            indices = sorted(self.stems)
            if indices != list(range(1, len(indices) + 1)):
                raise ValueError("stem indices must be contiguous from 1")


@dataclass(frozen=True)
class MorphophonRule:
    id: int
    variety: int
    pattern: str
    replacement: str  # may reference capture groups as $1..$9
    order: int
    scope: Optional[int] = None  # inflection class id; None = variety-wide


@dataclass(frozen=True)
class User:
    id: int
    name: str
    role: Role
    expertise: Expertise = Expertise.NON_EXPERT
    designated_expert: bool = False

    def __post_init__(self):
        if self.designated_expert and self.expertise is not Expertise.EXPERT:
            raise ValueError("designated experts must have Expert expertise")


@dataclass(frozen=True)
class QuestionTemplate:
    id: int
    variety: int
    features: FeatureSet
    text: str
    draft: bool = False  # provider-generated templates await linguist approval

    def __post_init__(self):
        if self.text.count("[LEMMA]") != 1:
            raise ValueError('question text must contain "[LEMMA]" exactly once')


@dataclass(frozen=True)
class Vote:
    user: int
    form: str


@dataclass(frozen=True)
class HistoryRecord:
    form: Optional[str]
    status: Status
    user: Optional[int]
    timestamp: float


@dataclass(frozen=True)
class WordformEntry:
    """One paradigm cell. ``version`` increases on every edit and ``history``
    holds the prior state of each edit, so len(history) == version - 1.
    ``priority`` is max(lemma priority, slot priority), captured at expansion.
    """

    id: int
    lemma: int
    features: FeatureSet
    form: Optional[str] = None
    status: Status = Status.EMPTY
    source: Source = Source.NONE
    votes: tuple[Vote, ...] = ()
    version: int = 1
    history: tuple[HistoryRecord, ...] = ()
    escalated: bool = False
    priority: int = 0

    def evolve(self, user: Optional[int] = None, **changes) -> "WordformEntry":
        """Return the next version with the current state appended to history."""
        record = HistoryRecord(self.form, self.status, user, time.time())
        return replace(
            self,
            version=self.version + 1,
            history=self.history + (record,),
            **changes,
        )


@dataclass(frozen=True)
class Suggestion:
    form: str
    source: Source
    confidence: float = 0.0


def clone_variety(repo, source: int, new_name: str) -> int:
    """Deep-copy a variety's materials (classes, structures, layers, rules,
    lexicon, question templates) into a new variety. Wordform data is never
    copied; the clone starts empty with ``parent_variety`` set to the source.
    """
    src = repo.get_variety(source)
    if src is None:
        raise UnknownVariety(f"no variety with id {source}")
    new_id = repo.add_variety(
        new_name, meta_language=src.meta_language, parent_variety=src.id, rtl=src.rtl
    )

    class_map: dict[int, int] = {}
    for klass in repo.list_classes(source):
        class_map[klass.id] = repo.add_class(new_id, klass.name, klass.pos)

    layer_map: dict[int, int] = {}
    for layer in repo.list_layers(source):
        layer_map[layer.id] = repo.add_layer(new_id, layer.name, layer.morphemes)

    for structure in repo.list_structures(source):
        repo.add_structure(
            new_id,
            class_map[structure.inflection_class],
            structure.name,
            structure.slots,
            tuple(layer_map[i] for i in structure.layer_refs),
        )

    for rule in repo.list_rules(source):
        repo.add_rule(
            new_id,
            rule.pattern,
            rule.replacement,
            rule.order,
            scope=class_map[rule.scope] if rule.scope is not None else None,
        )

    for lemma in repo.list_lemmas(source):
        repo.add_lemma(
            new_id,
            lemma.citation_form,
            lemma.gloss,
            class_map[lemma.inflection_class],
            dict(lemma.stems),
            lemma.priority,
        )

    for template in repo.list_question_templates(source):
        repo.add_question_template(
            new_id, template.features, template.text, draft=template.draft
        )

    return new_id
