"""TSV import/export of linguistic materials and UniMorph export.

All documents are UTF-8 with LF line endings and tab separation, no quoting:
fields containing tabs or newlines are rejected at write time. Column orders
are normative for this artifact:

    classes:    inflection_class, pos
    lexicon:    lemma, gloss, inflection_class, priority, stem1..stemK
    structures: structure, inflection_class, features, pattern, priority, layer
    layers:     layer, fragment, features
    rules:      pattern, replacement, order, scope
    questions:  features, text

The materials bundle includes the classes table so that class metadata
survives a round trip. UniMorph export is the standard three-column
``lemma<TAB>form<TAB>features`` with canonical ``;``-joined tags, verified
entries only, no header.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .domain import Slot, Status, canonicalize_featureset
from .errors import (
    EncodingError,
    MalformedGold,
    MissingHeader,
    MorphError,
)
from .patterns import ensure_tsv_field, parse_template

MATERIAL_KINDS = ("classes", "layers", "structures", "rules", "lexicon", "questions")


@dataclass(frozen=True)
class RowError:
    line: int  # 1-based line number in the document
    reason: str


def _decode(document: Union[str, bytes]) -> str:
    if isinstance(document, bytes):
        try:
            return document.decode("utf-8")
        except UnicodeDecodeError as e:
            raise EncodingError(f"document is not valid UTF-8: {e}") from e
    return document


def _rows(document: Union[str, bytes], expected_header: Sequence[str]):
    """Yield (line_number, cells) for data lines; validates the header."""
    text = _decode(document)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MissingHeader("empty document")
    header = lines[0].split("\t")
    if header[: len(expected_header)] != list(expected_header):
        raise MissingHeader(
            f"expected header starting with {list(expected_header)}, got {header}"
        )
    for i, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        yield i, line.split("\t"), header


def _emit(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    out = ["\t".join(ensure_tsv_field(h) for h in header)]
    for row in rows:
        out.append("\t".join(ensure_tsv_field(c) for c in row))
    return "\n".join(out) + "\n"


def _ensure_class(repo, variety: int, name: str, pos: str = "") -> int:
    existing = repo.class_by_name(variety, name)
    if existing is not None:
        return existing.id
    return repo.add_class(variety, name, pos)


# classes

def import_classes(repo, variety: int, document) -> tuple[int, list[RowError]]:
    count, errors = 0, []
    for line, cells, _ in _rows(document, ("inflection_class", "pos")):
        if len(cells) < 2 or not cells[0]:
            errors.append(RowError(line, "EmptyClassName"))
            continue
        existing = repo.class_by_name(variety, cells[0])
        if existing is None:
            repo.add_class(variety, cells[0], cells[1])
        count += 1
    return count, errors


def export_classes(repo, variety: int) -> str:
    rows = [
        (k.name, k.pos)
        for k in sorted(repo.list_classes(variety), key=lambda k: k.name)
    ]
    return _emit(("inflection_class", "pos"), rows)


# lexicon

def import_lexicon(
    repo, variety: int, document, all_or_nothing: bool = False
) -> tuple[int, list[RowError]]:
    """Upsert lemmas by (variety, citation form); invalid rows are skipped and
    reported with their line number unless all_or_nothing is set."""
    staged = []
    errors: list[RowError] = []
    for line, cells, header in _rows(
        document, ("lemma", "gloss", "inflection_class", "priority")
    ):
        if not cells[0]:
            errors.append(RowError(line, "EmptyLemma"))
            continue
        if len(cells) < 4:
            errors.append(RowError(line, "MissingColumns"))
            continue
        try:
            priority = int(cells[3]) if cells[3] else 0
        except ValueError:
            errors.append(RowError(line, "BadPriority"))
            continue
        stems = {}
        bad_stem = False
        for idx, column in enumerate(header[4:], start=4):
            if not column.startswith("stem"):
                continue
            value = cells[idx] if idx < len(cells) else ""
            if value:
                try:
                    stems[int(column[4:])] = value
                except ValueError:
                    bad_stem = True
        if bad_stem:
            errors.append(RowError(line, "BadStemColumn"))
            continue
        indices = sorted(stems)
        if indices and indices != list(range(1, len(indices) + 1)):
            errors.append(RowError(line, "NonContiguousStems"))
            continue
        staged.append((cells[0], cells[1], cells[2], priority, stems))
    if all_or_nothing and errors:
        return 0, errors
    count = 0
    for citation, gloss, class_name, priority, stems in staged:
        class_id = _ensure_class(repo, variety, class_name)
        repo.upsert_lemma(variety, citation, gloss, class_id, stems, priority)
        count += 1
    return count, errors


def export_lexicon(repo, variety: int) -> str:
    lemmas = sorted(repo.list_lemmas(variety), key=lambda l: l.citation_form)
    classes = {k.id: k.name for k in repo.list_classes(variety)}
    max_stems = max((max(l.stems) for l in lemmas if l.stems), default=0)
    header = ["lemma", "gloss", "inflection_class", "priority"] + [
        f"stem{i}" for i in range(1, max_stems + 1)
    ]
    rows = []
    for l in lemmas:
        rows.append(
            [l.citation_form, l.gloss, classes[l.inflection_class], str(l.priority)]
            + [l.stems.get(i, "") for i in range(1, max_stems + 1)]
        )
    return _emit(header, rows)


# reusable layers

def import_layers(repo, variety: int, document) -> tuple[int, list[RowError]]:
    from .domain import ReusableMorpheme

    grouped: dict[str, list] = {}
    errors: list[RowError] = []
    for line, cells, _ in _rows(document, ("layer", "fragment", "features")):
        if len(cells) < 3 or not cells[0]:
            errors.append(RowError(line, "MissingColumns"))
            continue
        try:
            features = canonicalize_featureset(cells[2].split(";"))
        except MorphError as e:
            errors.append(RowError(line, e.code))
            continue
        grouped.setdefault(cells[0], []).append(ReusableMorpheme(cells[1], features))
    count = 0
    for name, morphemes in grouped.items():
        existing = repo.layer_by_name(variety, name)
        if existing is not None:
            if [
                (m.fragment, m.features) for m in existing.morphemes
            ] == [(m.fragment, m.features) for m in morphemes]:
                count += len(morphemes)
                continue
            repo.replace_layer_morphemes(existing.id, tuple(morphemes))
        else:
            repo.add_layer(variety, name, tuple(morphemes))
        count += len(morphemes)
    return count, errors


def export_layers(repo, variety: int) -> str:
    rows = []
    for layer in sorted(repo.list_layers(variety), key=lambda l: l.name):
        for m in layer.morphemes:
            rows.append((layer.name, m.fragment, m.features.canonical()))
    return _emit(("layer", "fragment", "features"), rows)


# paradigm structures

def import_structures(repo, variety: int, document) -> tuple[int, list[RowError]]:
    grouped: dict[str, dict] = {}
    errors: list[RowError] = []
    header = ("structure", "inflection_class", "features", "pattern", "priority", "layer")
    for line, cells, _ in _rows(document, header):
        if len(cells) < 6 or not cells[0]:
            errors.append(RowError(line, "MissingColumns"))
            continue
        name, class_name, features_text, pattern, priority_text, layer_name = cells[:6]
        try:
            features = canonicalize_featureset(features_text.split(";"))
        except MorphError as e:
            errors.append(RowError(line, e.code))
            continue
        if pattern:
            try:
                parse_template(pattern)
            except MorphError as e:
                errors.append(RowError(line, e.code))
                continue
        try:
            priority = int(priority_text) if priority_text else 0
        except ValueError:
            errors.append(RowError(line, "BadPriority"))
            continue
        layer_id = None
        if layer_name:
            layer = repo.layer_by_name(variety, layer_name)
            if layer is None:
                errors.append(RowError(line, "UnknownLayer"))
                continue
            layer_id = layer.id
        group = grouped.setdefault(
            name, {"class": class_name, "slots": [], "layer": None}
        )
        group["slots"].append(Slot(features, pattern or None, priority))
        if layer_id is not None:
            group["layer"] = layer_id
    count = 0
    for name, group in grouped.items():
        class_id = _ensure_class(repo, variety, group["class"])
        layer_refs = (group["layer"],) if group["layer"] is not None else ()
        existing = next(
            (s for s in repo.list_structures(variety) if s.name == name), None
        )
        if existing is not None:
            repo.delete_structure(existing.id)
        repo.add_structure(variety, class_id, name, tuple(group["slots"]), layer_refs)
        count += 1
    return count, errors


def export_structures(repo, variety: int) -> str:
    classes = {k.id: k.name for k in repo.list_classes(variety)}
    layer_names = {l.id: l.name for l in repo.list_layers(variety)}
    rows = []
    for s in sorted(repo.list_structures(variety), key=lambda s: s.name):
        layer = layer_names[s.layer_refs[0]] if s.layer_refs else ""
        for slot in s.slots:
            rows.append(
                (
                    s.name,
                    classes[s.inflection_class],
                    slot.features.canonical(),
                    slot.pattern or "",
                    str(slot.priority),
                    layer,
                )
            )
    return _emit(
        ("structure", "inflection_class", "features", "pattern", "priority", "layer"),
        rows,
    )


# rewrite rules

def import_rules(repo, variety: int, document) -> tuple[int, list[RowError]]:
    count, errors = 0, []
    existing = {
        (r.scope, r.order): r for r in repo.list_rules(variety)
    }
    classes = {k.name: k.id for k in repo.list_classes(variety)}
    for line, cells, _ in _rows(document, ("pattern", "replacement", "order", "scope")):
        if len(cells) < 4 or not cells[0]:
            errors.append(RowError(line, "MissingColumns"))
            continue
        try:
            order = int(cells[2])
        except ValueError:
            errors.append(RowError(line, "BadOrder"))
            continue
        scope = None
        if cells[3]:
            if cells[3] not in classes:
                classes[cells[3]] = _ensure_class(repo, variety, cells[3])
            scope = classes[cells[3]]
        previous = existing.get((scope, order))
        if previous is not None:
            if (previous.pattern, previous.replacement) == (cells[0], cells[1]):
                count += 1
                continue
            repo.delete_rule(previous.id)
        try:
            repo.add_rule(variety, cells[0], cells[1], order, scope)
        except MorphError as e:
            errors.append(RowError(line, e.code))
            continue
        count += 1
    return count, errors


def export_rules(repo, variety: int) -> str:
    classes = {k.id: k.name for k in repo.list_classes(variety)}
    rules = sorted(
        repo.list_rules(variety),
        key=lambda r: ("" if r.scope is None else classes[r.scope], r.order),
    )
    rows = [
        (
            r.pattern,
            r.replacement,
            str(r.order),
            "" if r.scope is None else classes[r.scope],
        )
        for r in rules
    ]
    return _emit(("pattern", "replacement", "order", "scope"), rows)


# question templates

def import_questions(repo, variety: int, document) -> tuple[int, list[RowError]]:
    count, errors = 0, []
    existing = {
        (t.features.canonical(), t.text) for t in repo.list_question_templates(variety)
    }
    for line, cells, _ in _rows(document, ("features", "text")):
        if len(cells) < 2 or not cells[1]:
            errors.append(RowError(line, "MissingColumns"))
            continue
        try:
            features = canonicalize_featureset(cells[0].split(";"))
        except MorphError as e:
            errors.append(RowError(line, e.code))
            continue
        if (features.canonical(), cells[1]) in existing:
            count += 1
            continue
        try:
            repo.add_question_template(variety, features, cells[1])
        except ValueError:
            errors.append(RowError(line, "BadPlaceholder"))
            continue
        count += 1
    return count, errors


def export_questions(repo, variety: int) -> str:
    templates = sorted(
        repo.list_question_templates(variety),
        key=lambda t: (t.features.canonical(), t.text),
    )
    rows = [(t.features.canonical(), t.text) for t in templates if not t.draft]
    return _emit(("features", "text"), rows)


# bundles

_IMPORTERS = {
    "classes": import_classes,
    "lexicon": import_lexicon,
    "layers": import_layers,
    "structures": import_structures,
    "rules": import_rules,
    "questions": import_questions,
}
_EXPORTERS = {
    "classes": export_classes,
    "lexicon": export_lexicon,
    "layers": export_layers,
    "structures": export_structures,
    "rules": export_rules,
    "questions": export_questions,
}


def export_materials(repo, variety: int) -> dict[str, str]:
    """All material kinds as importable TSVs, keyed by kind."""
    return {kind: _EXPORTERS[kind](repo, variety) for kind in MATERIAL_KINDS}


def import_materials(repo, variety: int, bundle: dict) -> dict[str, tuple[int, list[RowError]]]:
    results = {}
    for kind in MATERIAL_KINDS:  # classes and layers first; structures need them
        if kind in bundle:
            results[kind] = _IMPORTERS[kind](repo, variety, bundle[kind])
    return results


def material_filename(variety_name: str, kind: str) -> str:
    return f"{variety_name}.{kind}.tsv"


# UniMorph

def export_unimorph(repo, variety: int) -> str:
    """One ``lemma<TAB>form<TAB>features`` line per Verified entry, sorted by
    (lemma, feature serialization). Only verified data is ever released."""
    citation = {l.id: l.citation_form for l in repo.list_lemmas(variety)}
    lines = []
    offset = 0
    while True:
        page = repo.query_cells(
            variety, status=Status.VERIFIED, page_size=1000, offset=offset
        )
        if not page:
            break
        for e in page:
            lines.append(
                (citation[e.lemma], e.form or "", e.features.canonical())
            )
        offset += len(page)
    lines.sort(key=lambda t: (t[0], t[2]))
    if not lines:
        return ""
    return "\n".join(
        "\t".join(ensure_tsv_field(c) for c in line) for line in lines
    ) + "\n"


def parse_unimorph(document) -> list[tuple[str, str, str]]:
    """Parse a three-column UniMorph document into (lemma, form, features)
    rows; raises MalformedGold on structural problems."""
    text = _decode(document)
    rows = []
    for i, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 3 or not all(cells):
            raise MalformedGold(f"line {i}: expected 3 non-empty tab-separated columns")
        try:
            features = canonicalize_featureset(cells[2].split(";"))
        except MorphError as e:
            raise MalformedGold(f"line {i}: {e.code}") from e
        rows.append((cells[0], cells[1], features.canonical()))
    return rows
