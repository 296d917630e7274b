"""Input encoding for the inflector.

An input sequence is the feature tags (whole tokens), a separator, and the
characters of stem 1 padded or truncated to a fixed 20-character segment; a
second stem, when present, follows after its own separator in another fixed
segment. Fixed segments keep batch shapes stable and cap sequence length.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..domain import FeatureSet, Lemma
from ..errors import MissingStem
from .vocab import PAD, SEP, SEP2

STEM_SEGMENT_LEN = 20


def _stem_segment(stem: str) -> list[str]:
    chars = list(stem)[:STEM_SEGMENT_LEN]
    return chars + [PAD] * (STEM_SEGMENT_LEN - len(chars))


def encode(lemma: Lemma, features: FeatureSet) -> list[str]:
    """Token sequence for (lemma, features); requires stem 1 to exist."""
    if 1 not in lemma.stems:
        raise MissingStem(1)
    tokens = list(features.tags) + [SEP] + _stem_segment(lemma.stems[1])
    if 2 in lemma.stems:
        tokens += [SEP2] + _stem_segment(lemma.stems[2])
    return tokens


@dataclass(frozen=True)
class TrainingExample:
    """Built only from Verified entries: input tokens plus the characters of
    the verified surface form."""

    input_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]


def training_example(lemma: Lemma, features: FeatureSet, form: str) -> TrainingExample:
    return TrainingExample(tuple(encode(lemma, features)), tuple(form))
