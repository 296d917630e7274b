"""Few-shot prompting against a pluggable text-completion provider.

The inflection prompt embeds previously verified forms with the same
morphosyntactic features as in-context examples; the question prompt asks the
provider to draft a speaker-friendly elicitation question for a feature set.
Provider failures degrade silently (the ensemble simply lacks an LLM
suggestion); requests are retried at most once.
"""
from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .domain import FeatureSet, Source, Suggestion, Variety, WordformEntry
from . import unimorph
from .errors import EmptyReply, NoExemplars

log = logging.getLogger(__name__)

LLM_CONFIDENCE = 0.5  # provider gives no score; fixed mid-scale constant


class CompletionProvider(Protocol):
    def complete(self, prompt: str) -> str: ...


class MockCompletionProvider:
    """Deterministic provider for tests and offline simulation: same prompt,
    same reply, no side effects."""

    def __init__(
        self,
        replies: Optional[dict[str, str]] = None,
        fallback: Optional[Callable[[str], str]] = None,
    ):
        self.replies = dict(replies or {})
        self.fallback = fallback
        self.calls: list[str] = []

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        if prompt in self.replies:
            return self.replies[prompt]
        if self.fallback is not None:
            return self.fallback(prompt)
        return ""


class HttpCompletionProvider:
    """Remote JSON API: request {model, prompt, max_tokens} -> response {text}.

    The key is sent as a bearer header and never logged.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str = "",
        max_tokens: int = 64,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.max_tokens = max_tokens
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model, "prompt": prompt, "max_tokens": self.max_tokens}
        log.info("provider request model=%s prompt_chars=%d key=<redacted>",
                 self.model, len(prompt))
        response = httpx.post(
            self.endpoint, json=payload, headers=headers, timeout=self.timeout
        )
        response.raise_for_status()
        text = response.json().get("text", "")
        log.info("provider response chars=%d", len(text))
        return text


@dataclass(frozen=True)
class FewShotExemplar:
    """A verified form whose features equal the target's, used in-context."""

    lemma: str
    stems: dict[int, str]
    form: str
    features: FeatureSet


@dataclass
class SuggesterConfig:
    shots: int = 2  # k, 1..3
    min_shots: int = 2  # below this no provider call is made (cold-start guard)


def select_exemplars(target: WordformEntry, store, k: int) -> list[FewShotExemplar]:
    """Up to k most recently verified cells with the target's exact canonical
    feature set, from other lemmas. Raises NoExemplars when none exist."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rows = store.recent_verified_exemplars(
        features=target.features, exclude_lemma=target.lemma, limit=k
    )
    if not rows:
        raise NoExemplars(f"no verified exemplars for {target.features.canonical()}")
    return rows


def _stem_clause(stems: dict[int, str]) -> str:
    parts = [f'its stem1 is "{stems[1]}"'] if 1 in stems else []
    if 2 in stems:
        parts.append(f'stem2 is "{stems[2]}"')
    return " and ".join(parts)


def _exemplar_stems(stems: dict[int, str]) -> str:
    parts = [f'stem1: "{stems[1]}"'] if 1 in stems else []
    if 2 in stems:
        parts.append(f'stem2: "{stems[2]}"')
    return ", ".join(parts)


def build_inflection_prompt(
    lemma: str,
    stems: dict[int, str],
    exemplars: Sequence[FewShotExemplar],
    variety: Variety,
) -> str:
    """Deterministic, byte-reproducible prompt; one reference bullet per
    exemplar, stem clauses omitted for absent stems."""
    if not exemplars:
        raise NoExemplars("at least one exemplar required")
    lines = [
        f"In the language {variety.name}, what is the correct inflected form "
        f"of the lemma {lemma}, given that {_stem_clause(stems)} for a "
        "specific grammatical feature set? As reference examples, under the "
        "same grammatical features:"
    ]
    for ex in exemplars:
        lines.append(
            f"- The lemma {ex.lemma} (with {_exemplar_stems(ex.stems)}) "
            f"yields the form {ex.form}."
        )
    lines.append("Think about this quietly and just give me one final inflected word.")
    return "\n".join(lines)


def build_question_prompt(features: FeatureSet, meta_language: str = "English") -> str:
    """Question-template generation prompt; each tag is verbalized as
    Dimension=Value from the bundled UniMorph table."""
    clause = ", ".join(unimorph.verbose(tag) for tag in features.tags)
    return (
        "You are a field linguist working with native speakers to study the "
        f"morphology of their language. The speakers are not trained in "
        f"linguistics but understand {meta_language}. Ask a speaker how they "
        f'would say the word "XXX" with these specific features: "{clause}".\n'
        'Generate only the question for the speaker. "XXX" should be in the '
        "question. Do not use linguistic terms. Keep it under 50 words. "
        "Do not explain anything to me."
    )


_STRIP_CHARS = "\"'`*_«»‘’“”.,!?;:()[]"


def parse_single_word_reply(reply: str) -> str:
    """Last whitespace-delimited token, stripped of quotes, punctuation, and
    markdown emphasis. Idempotent."""
    text = reply.strip()
    if not text:
        raise EmptyReply("provider returned no text")
    token = text.split()[-1]
    stripped = token.strip(_STRIP_CHARS)
    if not stripped:
        raise EmptyReply(f"reply {reply!r} contains no word")
    return stripped


def suggest(
    target: WordformEntry,
    lemma_citation: str,
    stems: dict[int, str],
    store,
    provider: CompletionProvider,
    variety: Variety,
    config: Optional[SuggesterConfig] = None,
) -> Optional[Suggestion]:
    """One LLM suggestion for a cell, or None when the cold-start guard or a
    provider failure applies."""
    cfg = config or SuggesterConfig()
    try:
        exemplars = select_exemplars(target, store, cfg.shots)
    except NoExemplars:
        return None
    if len(exemplars) < cfg.min_shots:
        return None
    prompt = build_inflection_prompt(lemma_citation, stems, exemplars, variety)
    reply = None
    for _ in range(2):  # one retry, then give up silently
        try:
            reply = provider.complete(prompt)
            if reply and reply.strip():
                break
        except Exception:
            log.warning("provider call failed", exc_info=True)
            reply = None
    if not reply or not reply.strip():
        return None
    try:
        form = parse_single_word_reply(reply)
    except EmptyReply:
        return None
    if any(ch.isspace() for ch in form):
        return None  # the prompt demands one word; anything else is a failure
    return Suggestion(form=form, source=Source.LLM, confidence=LLM_CONFIDENCE)


class AsyncSuggestionService:
    """Bounded-concurrency wrapper so speaker-facing reads never block on
    provider latency: the first read schedules the call and returns nothing,
    later reads pick up the cached result. ``synchronous=True`` (tests,
    simulation) resolves inline instead.
    """

    def __init__(self, max_in_flight: int = 2, synchronous: bool = False):
        self.synchronous = synchronous
        self._cache: dict[tuple[int, int], Optional[Suggestion]] = {}
        self._pending: set[tuple[int, int]] = set()
        self._lock = threading.Lock()
        self._pool = None if synchronous else ThreadPoolExecutor(max_workers=max_in_flight)

    def get_or_schedule(self, entry: WordformEntry, compute) -> Optional[Suggestion]:
        key = (entry.id, entry.version)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            if self.synchronous:
                pass
            elif key in self._pending:
                return None
            else:
                self._pending.add(key)
                self._pool.submit(self._run, key, compute)
                return None
        result = compute()
        with self._lock:
            self._cache[key] = result
        return result

    def _run(self, key, compute):
        try:
            result = compute()
        except Exception:
            log.warning("async suggestion failed", exc_info=True)
            result = None
        with self._lock:
            self._cache[key] = result
            self._pending.discard(key)
