"""Bundled UniMorph tag schema: POS allowlist and verbose dimension labels.

The table lives in ``data/unimorph_tags.tsv`` (tag, dimension, value). It is a
practical subset of the schema, not an exhaustive copy; unknown tags are
accepted in feature sets but cannot be verbalized.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .errors import UnknownTag

_POS_DIMENSION = "Part-of-Speech"


@lru_cache(maxsize=1)
def _table() -> dict[str, tuple[str, str]]:
    text = (
        resources.files("morphcollect")
        .joinpath("data/unimorph_tags.tsv")
        .read_text(encoding="utf-8")
    )
    rows: dict[str, tuple[str, str]] = {}
    for line in text.splitlines()[1:]:
        if not line:
            continue
        tag, dimension, value = line.split("\t")
        rows[tag] = (dimension, value)
    return rows


def pos_tags() -> frozenset[str]:
    return frozenset(t for t, (d, _) in _table().items() if d == _POS_DIMENSION)


def is_pos(tag: str) -> bool:
    return tag in pos_tags()


def verbose(tag: str) -> str:
    """Map a tag to its ``Dimension=Value`` label, e.g. ``PST`` -> ``Tense=Past``."""
    try:
        dimension, value = _table()[tag]
    except KeyError:
        raise UnknownTag(f"tag {tag!r} is not in the bundled UniMorph table") from None
    return f"{dimension}={value}"


def known_tags() -> frozenset[str]:
    return frozenset(_table())
