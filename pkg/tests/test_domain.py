import pytest
from hypothesis import given, strategies as st

from morphcollect import unimorph
from morphcollect.domain import (
    Expertise,
    FeatureSet,
    QuestionTemplate,
    Role,
    User,
    canonicalize_featureset,
)
from morphcollect.errors import EmptyInput, NoPosTag


def test_pos_moved_first():
    assert canonicalize_featureset(["PST", "V"]).canonical() == "V;PST"


def test_duplicates_removed():
    assert canonicalize_featureset(["V", "PST", "PST"]).canonical() == "V;PST"


def test_no_pos_tag():
    with pytest.raises(NoPosTag):
        canonicalize_featureset(["PST"])


def test_empty_input():
    with pytest.raises(EmptyInput):
        canonicalize_featureset([])
    with pytest.raises(EmptyInput):
        canonicalize_featureset(["", "  "])


def test_input_order_preserved_after_pos():
    fs = canonicalize_featureset(["PL", "2", "V", "IMP", "PRS"])
    assert fs.canonical() == "V;PL;2;IMP;PRS"


def test_aliases_do_not_affect_identity():
    a = canonicalize_featureset(["V", "PST"], aliases={"PST": "gone-by"})
    b = canonicalize_featureset(["V", "PST"])
    assert a == b
    assert hash(a) == hash(b)


def test_equality_is_serialization_equality():
    a = canonicalize_featureset(["PST", "V"])
    b = canonicalize_featureset(["V", "PST", "PST"])
    assert a == b and a.canonical() == b.canonical()
    c = canonicalize_featureset(["V", "PRS"])
    assert a != c and a.canonical() != c.canonical()


_tags = st.lists(
    st.sampled_from(sorted(unimorph.known_tags())), min_size=1, max_size=8
).filter(lambda ts: any(unimorph.is_pos(t) for t in ts))


@given(_tags)
def test_canonicalize_idempotent(tags):
    once = canonicalize_featureset(tags)
    twice = canonicalize_featureset(list(once.tags))
    assert once == twice
    assert once.canonical() == twice.canonical()


@given(_tags)
def test_canonical_starts_with_pos(tags):
    fs = canonicalize_featureset(tags)
    assert unimorph.is_pos(fs.tags[0])
    assert len(set(fs.tags)) == len(fs.tags)


def test_designated_expert_requires_expert():
    with pytest.raises(ValueError):
        User(1, "a", Role.SPEAKER, Expertise.NON_EXPERT, designated_expert=True)
    User(1, "a", Role.SPEAKER, Expertise.EXPERT, designated_expert=True)


def test_question_template_placeholder_count():
    fs = canonicalize_featureset(["V", "PST"])
    QuestionTemplate(1, 1, fs, "How would you say [LEMMA] yesterday?")
    with pytest.raises(ValueError):
        QuestionTemplate(1, 1, fs, "no placeholder here")
    with pytest.raises(ValueError):
        QuestionTemplate(1, 1, fs, "[LEMMA] and [LEMMA]")


def test_verbose_tag_labels():
    assert unimorph.verbose("V") == "Part-of-Speech=Verb"
    assert unimorph.verbose("PST") == "Tense=Past"
    assert unimorph.verbose("2") == "Person=2nd"


def test_featureset_str():
    assert str(canonicalize_featureset(["V", "PST"])) == "V;PST"
