import random

import pytest
from hypothesis import given, strategies as st

from morphcollect.errors import EmptyReference
from morphcollect.metrics import cer, edit_distance

from oracles import cer_oracle, edit_distance_oracle


def test_identity():
    assert edit_distance("walked", "walked") == 0


def test_single_substitution():
    # frozen from the full-matrix oracle
    assert edit_distance_oracle("degirin", "degirim") == 1
    assert edit_distance("degirin", "degirim") == 1


def test_insertions_from_empty():
    assert edit_distance("", "abc") == 3
    assert edit_distance("abc", "") == 3


def test_matches_oracle_on_random_pairs():
    rng = random.Random(13)
    alphabet = "abcdefgş êîü"
    for _ in range(300):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 9)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 9)))
        assert edit_distance(a, b) == edit_distance_oracle(a, b)


_short = st.text(max_size=8)


@given(_short, _short)
def test_symmetry(a, b):
    assert edit_distance(a, b) == edit_distance(b, a)


@given(_short, _short)
def test_identity_of_indiscernibles(a, b):
    assert (edit_distance(a, b) == 0) == (a == b)


@given(_short, _short, _short)
def test_triangle_inequality(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_cer_all_equal_is_zero():
    report = cer([("walked", "walked"), ("geliyor", "geliyor")])
    assert report.cer_percent == 0.0
    assert report.total_edits == 0


def test_cer_single_pair():
    report = cer([("degirin", "degirim")])
    assert report.cer_percent == pytest.approx(100.0 / 7)
    assert f"{report.cer_percent:.2f}" == "14.29"


def test_cer_empty_reference():
    with pytest.raises(EmptyReference):
        cer([("x", "")])


def test_cer_micro_average():
    # 1 edit over 3 chars + 0 edits over 7 chars = 1/10, not mean(1/3, 0)
    report = cer([("abq", "abc"), ("geliyor", "geliyor")])
    assert report.cer == pytest.approx(0.1)
    assert report.item_count == 2


def test_cer_matches_oracle_on_random_batch():
    rng = random.Random(99)
    pairs = []
    for _ in range(200):
        ref = "".join(rng.choice("abcdef") for _ in range(rng.randrange(1, 10)))
        hyp = "".join(rng.choice("abcdef") for _ in range(rng.randrange(0, 10)))
        pairs.append((hyp, ref))
    assert cer(pairs).cer_percent == pytest.approx(cer_oracle(pairs))
