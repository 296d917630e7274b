"""Token/id mapping shared by encoder and decoder.

Feature tags are atomic tokens; surface characters are single-character
tokens. Decoding is restricted to tokens seen on the target side (plus EOS)
so an undertrained model cannot emit feature tags or padding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"
SEP2 = "<sep2>"
UNK = "<unk>"

SPECIALS = (PAD, BOS, EOS, SEP, SEP2, UNK)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    target_tokens: frozenset[str]
    index: dict[str, int] = field(compare=False, hash=False, default_factory=dict)

    @staticmethod
    def build(
        input_sequences: Iterable[Sequence[str]],
        target_sequences: Iterable[Sequence[str]],
    ) -> "Vocabulary":
        seen: set[str] = set()
        targets: set[str] = set()
        for seq in input_sequences:
            seen.update(seq)
        for seq in target_sequences:
            seen.update(seq)
            targets.update(seq)
        ordinary = sorted(seen - set(SPECIALS))
        tokens = SPECIALS + tuple(ordinary)
        return Vocabulary(
            tokens=tokens,
            target_tokens=frozenset(targets | {EOS}),
            index={t: i for i, t in enumerate(tokens)},
        )

    def __post_init__(self):
        if not self.index:
            object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def token(self, i: int) -> str:
        return self.tokens[i]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def target_ids(self) -> list[int]:
        return sorted(self.index[t] for t in self.target_tokens if t in self.index)
