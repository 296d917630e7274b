import pytest
from hypothesis import given, strategies as st

from morphcollect.domain import (
    Lemma,
    MorphophonRule,
    ParadigmStructure,
    ReusableLayer,
    ReusableMorpheme,
    Slot,
    Source,
    Status,
    canonicalize_featureset,
)
from morphcollect.errors import (
    DuplicateFeatureSet,
    MissingLayerMorpheme,
    MissingStem,
    RegexCompileError,
    UnbalancedBrace,
    UnknownPlaceholder,
    ZeroStemIndex,
)
from morphcollect.patterns import (
    LayerRef,
    Literal,
    PatternTemplate,
    StemRef,
    apply_morphophonology,
    blank_table,
    compile_rule,
    expand_paradigm,
    order_rules,
    parse_template,
    render,
    serialize_template,
)


def lemma(**kw):
    defaults = dict(
        id=1, variety=1, citation_form="walk", gloss="walk",
        inflection_class=1, stems={1: "walk"}, priority=0,
    )
    defaults.update(kw)
    return Lemma(**defaults)


class TestParse:
    def test_stem_then_literal(self):
        t = parse_template("{stem1}ing")
        assert t.segments == (StemRef(1), Literal("ing"))

    def test_literal_stem_layer(self):
        t = parse_template("de{stem2}{layer}")
        assert t.segments == (Literal("de"), StemRef(2), LayerRef())

    def test_zero_stem_index(self):
        with pytest.raises(ZeroStemIndex):
            parse_template("{stem0}x")

    def test_unbalanced(self):
        with pytest.raises(UnbalancedBrace):
            parse_template("{stem1")
        with pytest.raises(UnbalancedBrace):
            parse_template("ab}c")

    def test_unknown_placeholder(self):
        with pytest.raises(UnknownPlaceholder):
            parse_template("{foo}")
        with pytest.raises(UnknownPlaceholder):
            parse_template("{stem01}")  # leading zero does not round-trip

    def test_two_layers_rejected(self):
        with pytest.raises(UnknownPlaceholder):
            parse_template("{layer}{layer}")

    def test_round_trip_examples(self):
        for s in ("{stem1}ing", "de{stem2}{layer}", "plain", "{stem12}a{stem1}"):
            assert serialize_template(parse_template(s)) == s


_literal_text = st.text(
    alphabet=st.characters(blacklist_characters="{}", blacklist_categories=("Cs",)),
    min_size=1,
    max_size=6,
)


@st.composite
def _templates(draw):
    n = draw(st.integers(min_value=1, max_value=5))
    segments = []
    layer_used = False
    prev_literal = False
    for _ in range(n):
        kind = draw(st.sampled_from(["lit", "stem", "layer"]))
        if kind == "lit" and not prev_literal:
            segments.append(Literal(draw(_literal_text)))
            prev_literal = True
        elif kind == "stem":
            segments.append(StemRef(draw(st.integers(min_value=1, max_value=20))))
            prev_literal = False
        elif kind == "layer" and not layer_used:
            segments.append(LayerRef())
            layer_used = True
            prev_literal = False
    if not segments:
        segments = [StemRef(1)]
    return PatternTemplate(tuple(segments))


@given(_templates())
def test_round_trip_property(template):
    assert parse_template(serialize_template(template)) == template


class TestRender:
    def test_simple_suffix(self):
        assert render(parse_template("{stem1}s"), lemma(stems={1: "walk"})) == "walks"

    def test_prefix_stem_layer(self):
        m = ReusableMorpheme("im", canonicalize_featureset(["V", "1", "SG"]))
        out = render(
            parse_template("de{stem2}{layer}"),
            lemma(stems={1: "kuşt", 2: "kuj"}),
            m,
        )
        assert out == "dekujim"

    def test_missing_stem(self):
        with pytest.raises(MissingStem) as exc:
            render(parse_template("{stem2}x"), lemma(stems={1: "walk"}))
        assert exc.value.index == 2

    def test_missing_layer_morpheme(self):
        with pytest.raises(MissingLayerMorpheme):
            render(parse_template("{stem1}{layer}"), lemma())

    def test_length_is_sum_of_segments(self):
        lem = lemma(stems={1: "abc", 2: "de"})
        m = ReusableMorpheme("xyz", canonicalize_featureset(["V", "PL"]))
        out = render(parse_template("a{stem1}b{stem2}{layer}"), lem, m)
        assert len(out) == 1 + 3 + 1 + 2 + 3


def rule(id, pattern, replacement, order, scope=None):
    return MorphophonRule(id, 1, pattern, replacement, order, scope)


class TestRewrite:
    def test_bus_plural(self):
        r = rule(1, r"(s|x|z|sh|ch)s$", "$1es", 1)
        out = apply_morphophonology("buss", [r])
        assert out.surface == "buses"
        assert out.applied_rules == (1,)

    def test_turkish_harmony_pair(self):
        # A -> a after a back vowel anywhere later in the stem, otherwise A -> e
        back = rule(1, r"([aıou][^aeıioöuü]*)A", "$1a", 1)
        rest = rule(2, "A", "e", 2)
        assert apply_morphophonology("gellAr", [back, rest]).surface == "geller"
        assert apply_morphophonology("kollAr", [back, rest]).surface == "kollar"

    def test_empty_rule_list_is_identity(self):
        out = apply_morphophonology("walk", [])
        assert out.surface == "walk" and out.raw == "walk"
        assert out.applied_rules == ()

    def test_single_pass_no_fixpoint(self):
        # aa -> a applied once on "aaaa" halves pairs but does not iterate
        r = rule(1, "aa", "a", 1)
        assert apply_morphophonology("aaaa", [r]).surface == "aa"

    def test_deterministic(self):
        rules = [rule(1, "s$", "z", 1), rule(2, "z$", "s", 2)]
        a = apply_morphophonology("walks", rules)
        b = apply_morphophonology("walks", rules)
        assert a == b

    def test_compile_error_surfaces_at_save(self):
        with pytest.raises(RegexCompileError):
            compile_rule(rule(1, "([a", "x", 1))

    def test_order_rules_variety_wide_first(self):
        rs = [rule(3, "a", "b", 1, scope=7), rule(1, "c", "d", 2), rule(2, "e", "f", 1)]
        assert [r.id for r in order_rules(rs)] == [2, 1, 3]


def _structure_with_layer():
    fs = canonicalize_featureset
    layer = ReusableLayer(
        10, 1, "person",
        tuple(
            ReusableMorpheme(frag, fs(["V", p, n]))
            for frag, p, n in [
                ("im", "1", "SG"), ("in", "2", "SG"), ("i", "3", "SG"),
                ("în", "1", "PL"), ("inə", "2", "PL"), ("an", "3", "PL"),
            ]
        ),
    )
    structure = ParadigmStructure(
        20, 1, "present+past",
        slots=(
            Slot(fs(["V", "PRS"]), "de{stem2}{layer}", priority=1),
            Slot(fs(["V", "PST"]), "{stem1}{layer}", priority=0),
        ),
        layer_refs=(10,),
    )
    return structure, layer


class TestExpand:
    def test_cross_product_cardinality(self):
        structure, layer = _structure_with_layer()
        lem = lemma(stems={1: "kuşt", 2: "kuj"})
        cells = expand_paradigm(lem, structure, [layer], [])
        assert len(cells) == 12
        assert all(c.status is Status.SUGGESTED and c.source is Source.RULE for c in cells)
        assert cells[0].form == "dekujim"

    def test_patternless_slot_is_empty(self):
        fs = canonicalize_featureset
        structure = ParadigmStructure(
            1, 1, "s", slots=(Slot(fs(["V", "PST"]), None),), layer_refs=()
        )
        cells = expand_paradigm(lemma(), structure, [], [])
        assert len(cells) == 1
        assert cells[0].status is Status.EMPTY and cells[0].form is None
        assert cells[0].source is Source.NONE

    def test_duplicate_feature_sets_rejected(self):
        fs = canonicalize_featureset
        structure = ParadigmStructure(
            1, 1, "s",
            slots=(Slot(fs(["V", "PST"]), "{stem1}a"), Slot(fs(["PST", "V"]), "{stem1}b")),
        )
        with pytest.raises(DuplicateFeatureSet):
            expand_paradigm(lemma(), structure, [], [])

    def test_class_scoped_rules_filtered(self):
        fs = canonicalize_featureset
        structure = ParadigmStructure(
            1, 1, "s", slots=(Slot(fs(["V", "PST"]), "{stem1}ed"),)
        )
        other_class = rule(1, "ed$", "XX", 1, scope=99)
        mine = rule(2, "ked$", "ked!", 1, scope=1)
        cells = expand_paradigm(lemma(), structure, [], [other_class, mine])
        assert cells[0].form == "walked!"

    def test_expansion_size_formula(self):
        structure, layer = _structure_with_layer()
        fs = canonicalize_featureset
        mixed = ParadigmStructure(
            2, 1, "mixed",
            slots=structure.slots + (Slot(fs(["V", "FUT"]), None),),
            layer_refs=(10,),
        )
        cells = expand_paradigm(lemma(stems={1: "a", 2: "b"}), mixed, [layer], [])
        assert len(cells) == 6 + 6 + 1

    def test_priority_is_max_of_lemma_and_slot(self):
        structure, layer = _structure_with_layer()
        cells = expand_paradigm(
            lemma(stems={1: "a", 2: "b"}, priority=5), structure, [layer], []
        )
        assert {c.priority for c in cells} == {5}
        cells = expand_paradigm(
            lemma(stems={1: "a", 2: "b"}, priority=0), structure, [layer], []
        )
        assert {c.priority for c in cells} == {0, 1}


class TestBlankTable:
    def test_one_lemma_four_cells(self):
        fs = canonicalize_featureset
        structure = ParadigmStructure(
            1, 1, "verbs",
            slots=tuple(
                Slot(fs(["V", t]), f"{{stem1}}{suf}")
                for t, suf in [("PRS", "s"), ("PST", "ed"), ("V.PTCP", "en"), ("PROG", "ing")]
            ),
        )
        doc = blank_table(structure, [], [lemma()])
        lines = doc.splitlines()
        assert len(lines) == 2
        assert all(len(line.split("\t")) == 5 for line in lines)
        assert lines[1].split("\t")[0] == "walk"
        assert lines[1].split("\t")[1:] == [""] * 4

    def test_zero_lemmas_header_only(self):
        fs = canonicalize_featureset
        structure = ParadigmStructure(1, 1, "s", slots=(Slot(fs(["V", "PST"]), None),))
        doc = blank_table(structure, [], [])
        assert doc.splitlines() == ["lemma\tV;PST"]

    def test_layer_expansion_in_header(self):
        structure, layer = _structure_with_layer()
        doc = blank_table(structure, [layer], [lemma(), lemma(id=2, citation_form="go"), lemma(id=3, citation_form="see")])
        lines = doc.splitlines()
        assert len(lines) == 4
        assert all(len(line.split("\t")) == 13 for line in lines)
