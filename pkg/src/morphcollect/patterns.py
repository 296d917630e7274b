"""Pattern templates, morphophonological rewriting, and paradigm expansion.

Template syntax: ``{stem1}`` .. ``{stemK}`` substitute lemma stems, ``{layer}``
substitutes a reusable-layer morpheme fragment; everything else is literal.
Rewrite rules are ordinary regular expressions applied once each, in order
(no fixpoint iteration); replacements may reference capture groups as ``$1``
through ``$9``. The supported dialect is the portable core: character classes,
alternation, anchors, repetition, and capture groups.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .domain import (
    FeatureSet,
    Lemma,
    MorphophonRule,
    ParadigmStructure,
    ReusableLayer,
    ReusableMorpheme,
    Source,
    Status,
    WordformEntry,
    canonicalize_featureset,
)
from .errors import (
    DuplicateFeatureSet,
    MissingLayerMorpheme,
    MissingStem,
    RegexCompileError,
    UnbalancedBrace,
    UnknownPlaceholder,
    ZeroStemIndex,
    FieldCharError,
)


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class StemRef:
    index: int


@dataclass(frozen=True)
class LayerRef:
    pass


Segment = Union[Literal, StemRef, LayerRef]

_STEM_PLACEHOLDER = re.compile(r"^stem([0-9]+)$")


@dataclass(frozen=True)
class PatternTemplate:
    segments: tuple[Segment, ...]

    def has_layer_ref(self) -> bool:
        return any(isinstance(s, LayerRef) for s in self.segments)

    def stem_indices(self) -> set[int]:
        return {s.index for s in self.segments if isinstance(s, StemRef)}


def parse_template(source: str) -> PatternTemplate:
    """Parse template text into segments; ``serialize(parse(s)) == s``."""
    segments: list[Segment] = []
    literal: list[str] = []
    i = 0
    layer_seen = False
    while i < len(source):
        ch = source[i]
        if ch == "{":
            end = source.find("}", i + 1)
            if end < 0:
                raise UnbalancedBrace(f"unclosed '{{' at position {i}")
            name = source[i + 1 : end]
            if literal:
                segments.append(Literal("".join(literal)))
                literal = []
            if name == "layer":
                if layer_seen:
                    raise UnknownPlaceholder("at most one {layer} per template")
                layer_seen = True
                segments.append(LayerRef())
            else:
                m = _STEM_PLACEHOLDER.match(name)
                if not m:
                    raise UnknownPlaceholder(f"unknown placeholder {{{name}}}")
                digits = m.group(1)
                if int(digits) == 0:
                    raise ZeroStemIndex("stem indices start at 1")
                if digits[0] == "0":
                    raise UnknownPlaceholder(f"malformed stem index {{{name}}}")
                segments.append(StemRef(int(digits)))
            i = end + 1
        elif ch == "}":
            raise UnbalancedBrace(f"unmatched '}}' at position {i}")
        else:
            literal.append(ch)
            i += 1
    if literal:
        segments.append(Literal("".join(literal)))
    return PatternTemplate(tuple(segments))


def serialize_template(template: PatternTemplate) -> str:
    parts = []
    for seg in template.segments:
        if isinstance(seg, Literal):
            parts.append(seg.text)
        elif isinstance(seg, StemRef):
            parts.append(f"{{stem{seg.index}}}")
        else:
            parts.append("{layer}")
    return "".join(parts)


def render(
    template: PatternTemplate,
    lemma: Lemma,
    morpheme: Optional[ReusableMorpheme] = None,
) -> str:
    """Concatenate literals, lemma stems, and the layer morpheme fragment."""
    out = []
    for seg in template.segments:
        if isinstance(seg, Literal):
            out.append(seg.text)
        elif isinstance(seg, StemRef):
            if seg.index not in lemma.stems:
                raise MissingStem(seg.index)
            out.append(lemma.stems[seg.index])
        else:
            if morpheme is None:
                raise MissingLayerMorpheme("template has {layer} but no morpheme given")
            out.append(morpheme.fragment)
    return "".join(out)


_DOLLAR_REF = re.compile(r"\$([0-9])")


def _to_python_replacement(replacement: str) -> str:
    # $1..$9 -> \g<1>..; a literal backslash in the input stays literal.
    escaped = replacement.replace("\\", "\\\\")
    return _DOLLAR_REF.sub(lambda m: rf"\g<{m.group(1)}>", escaped)


def compile_rule(rule: MorphophonRule) -> re.Pattern:
    """Validate at save time; rules that do not compile are never stored."""
    try:
        return re.compile(rule.pattern)
    except re.error as e:
        raise RegexCompileError(f"pattern {rule.pattern!r}: {e}") from e


def order_rules(rules: Sequence[MorphophonRule]) -> list[MorphophonRule]:
    """Variety-wide rules first, then class-scoped, each block by order."""
    return sorted(rules, key=lambda r: (0 if r.scope is None else 1, r.order, r.id))


@dataclass(frozen=True)
class RenderedForm:
    raw: str
    surface: str
    applied_rules: tuple[int, ...]


def apply_morphophonology(
    raw: str, rules: Sequence[MorphophonRule]
) -> RenderedForm:
    """Apply each rule once, in the given order, replacing all non-overlapping
    leftmost matches. ``applied_rules`` records the ids that changed the string.
    """
    surface = raw
    applied: list[int] = []
    for rule in rules:
        pattern = compile_rule(rule)
        replaced = pattern.sub(_to_python_replacement(rule.replacement), surface)
        if replaced != surface:
            applied.append(rule.id)
        surface = replaced
    return RenderedForm(raw=raw, surface=surface, applied_rules=tuple(applied))


@dataclass
class ExpandedCell:
    """Pre-persistence result of paradigm expansion; storage assigns entry ids."""

    features: FeatureSet
    form: Optional[str]
    status: Status
    source: Source
    priority: int
    raw: Optional[str] = None
    applied_rules: tuple[int, ...] = ()


def expand_paradigm(
    lemma: Lemma,
    structure: ParadigmStructure,
    layers: Sequence[ReusableLayer],
    rules: Sequence[MorphophonRule],
) -> list[ExpandedCell]:
    """Cross each slot with the layer morphemes its pattern references.

    Slots whose pattern contains ``{layer}`` produce one cell per morpheme of
    the structure's first referenced layer; other slots produce a single cell.
    Cells with a pattern come out Suggested with source Rule; patternless cells
    come out Empty.
    """
    if lemma.inflection_class != structure.inflection_class:
        raise ValueError("lemma and structure belong to different inflection classes")
    layer_by_id = {l.id: l for l in layers}
    rules_in_order = order_rules(rules)
    applicable = [
        r for r in rules_in_order if r.scope is None or r.scope == lemma.inflection_class
    ]

    cells: list[ExpandedCell] = []
    seen: dict[str, FeatureSet] = {}
    for slot in structure.slots:
        template = parse_template(slot.pattern) if slot.pattern else None
        priority = max(lemma.priority, slot.priority)
        if template is not None and template.has_layer_ref():
            if not structure.layer_refs:
                raise MissingLayerMorpheme(
                    f"structure {structure.name!r} uses {{layer}} but references no layer"
                )
            layer = layer_by_id[structure.layer_refs[0]]
            combos = [(template, m) for m in layer.morphemes]
        else:
            combos = [(template, None)]
        for tmpl, morpheme in combos:
            tags = list(slot.features.tags)
            if morpheme is not None:
                tags += list(morpheme.features.tags)
            features = canonicalize_featureset(tags)
            key = features.canonical()
            if key in seen:
                raise DuplicateFeatureSet(f"expansion repeats feature set {key}")
            seen[key] = features
            if tmpl is None:
                cells.append(
                    ExpandedCell(features, None, Status.EMPTY, Source.NONE, priority)
                )
            else:
                raw = render(tmpl, lemma, morpheme)
                rendered = apply_morphophonology(raw, applicable)
                cells.append(
                    ExpandedCell(
                        features,
                        rendered.surface,
                        Status.SUGGESTED,
                        Source.RULE,
                        priority,
                        raw=raw,
                        applied_rules=rendered.applied_rules,
                    )
                )
    return cells


def ensure_tsv_field(value: str) -> str:
    """Reject tabs/newlines at write time; there is no quoting dialect."""
    if "\t" in value or "\n" in value or "\r" in value:
        raise FieldCharError(f"tabs/newlines not allowed in TSV fields: {value!r}")
    return value


def blank_table(
    structure: ParadigmStructure,
    layers: Sequence[ReusableLayer],
    lemmas: Sequence[Lemma],
) -> str:
    """Printable TSV: header of canonical feature sets, one row per lemma,
    empty form cells. UTF-8, LF line endings.
    """
    header_cells: list[str] = []
    for slot in structure.slots:
        template = parse_template(slot.pattern) if slot.pattern else None
        if template is not None and template.has_layer_ref() and structure.layer_refs:
            layer = next(l for l in layers if l.id == structure.layer_refs[0])
            for morpheme in layer.morphemes:
                features = canonicalize_featureset(
                    list(slot.features.tags) + list(morpheme.features.tags)
                )
                header_cells.append(features.canonical())
        else:
            header_cells.append(slot.features.canonical())
    lines = ["\t".join(["lemma"] + [ensure_tsv_field(c) for c in header_cells])]
    for lemma in lemmas:
        lines.append("\t".join([ensure_tsv_field(lemma.citation_form)] + [""] * len(header_cells)))
    return "\n".join(lines) + "\n"
