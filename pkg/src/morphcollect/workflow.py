"""The active-learning elicitation loop.

Entry lifecycle: Empty/Suggested -> Submitted -> Verified, with conflicts
flagged on disagreement and settled either by a strict majority of designated
expert speakers or by linguist adjudication. Every state change goes through
compare-and-set and appends exactly one history record.
"""
from __future__ import annotations

import enum
import logging
import threading
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import llm
from .domain import (
    Expertise,
    Role,
    Source,
    Status,
    Suggestion,
    User,
    Vote,
    WordformEntry,
)
from .ensemble import Presentation, aggregate
from .errors import (
    EmptyForm,
    Forbidden,
    InvalidState,
    NotASpeaker,
    NotFlagged,
    NotFound,
    SelfVerification,
    StaleVersion,
)
from .neural import InflectorModel, TrainConfig, train, training_example

log = logging.getLogger(__name__)

RULE_CONFIDENCE = 1.0  # linguist-audited patterns count as fully confident


class Phase(enum.Enum):
    COLD_START = "ColdStart"
    ACTIVE_LEARNING = "ActiveLearning"


class TaskMode(enum.Enum):
    EXPERT_BULK = "ExpertBulk"
    NON_EXPERT_SINGLE = "NonExpertSingle"


@dataclass
class WorkflowConfig:
    n_train: int = 100  # verified entries needed to leave cold start
    delta_n: int = 100  # newly verified entries between retrainings
    expert_quorum: int = 3  # Q, expert votes required for consensus
    train_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    suggester: llm.SuggesterConfig = field(default_factory=llm.SuggesterConfig)


@dataclass(frozen=True)
class TaskQueueItem:
    entry: WordformEntry
    priority: int
    uncertainty: float
    mode: TaskMode
    presentation: Presentation
    question: Optional[str] = None


@dataclass(frozen=True)
class Resolution:
    outcome: str  # "resolved" | "escalated"
    winning_form: Optional[str]
    tally: dict[str, int]


@dataclass(frozen=True)
class TrainingJob:
    variety: int
    example_count: int
    loss_curve: tuple[float, ...]


class ModelStore:
    """Per-variety immutable model snapshots; swap is atomic, readers never
    see a half-written model."""

    def __init__(self):
        self._models: dict[int, InflectorModel] = {}
        self._lock = threading.Lock()

    def get(self, variety: int) -> Optional[InflectorModel]:
        with self._lock:
            return self._models.get(variety)

    def set(self, variety: int, model: InflectorModel) -> None:
        with self._lock:
            self._models[variety] = model


def _norm(form: str) -> str:
    return unicodedata.normalize("NFC", form.strip())


def queue_key(priority: int, uncertainty: float, entry_id: int):
    """Total order for the task queue: priority desc, uncertainty desc,
    entry id asc."""
    return (-priority, -uncertainty, entry_id)


class Workflow:
    def __init__(
        self,
        repo,
        config: Optional[WorkflowConfig] = None,
        provider: Optional[llm.CompletionProvider] = None,
        models: Optional[ModelStore] = None,
        suggestions: Optional[llm.AsyncSuggestionService] = None,
    ):
        self.repo = repo
        self.config = config or WorkflowConfig()
        self.provider = provider
        self.models = models or ModelStore()
        self.suggestions = suggestions or llm.AsyncSuggestionService(synchronous=True)

    # pipeline phase

    def phase(self, variety: int) -> Phase:
        if self.repo.verified_count(variety) < self.config.n_train:
            return Phase.COLD_START
        return Phase.ACTIVE_LEARNING

    # task queue

    def next_tasks(self, user: User, variety: int, limit: int) -> list[TaskQueueItem]:
        """Open cells ordered by (priority desc, uncertainty desc, id asc).

        Non-experts get a single task with a rendered question when one
        exists; experts get up to ``limit`` tasks grouped by lemma.
        """
        if user.role is not Role.SPEAKER:
            raise NotASpeaker(f"user {user.id} has role {user.role.value}")
        candidates = [
            e
            for status in (Status.EMPTY, Status.SUGGESTED)
            for e in self.repo.query_cells(variety, status=status, page_size=1000)
        ]
        if not candidates:
            return []

        model = self.models.get(variety) if self.phase(variety) is Phase.ACTIVE_LEARNING else None
        predictions = {}
        if model is not None:
            lemmas = {e.lemma: self.repo.get_lemma(e.lemma) for e in candidates}
            usable = [e for e in candidates if 1 in lemmas[e.lemma].stems]
            preds = model.predict_many([(lemmas[e.lemma], e.features) for e in usable])
            predictions = {e.id: p for e, p in zip(usable, preds)}

        def uncertainty(e: WordformEntry) -> float:
            return predictions[e.id].uncertainty if e.id in predictions else 0.0

        candidates.sort(key=lambda e: queue_key(e.priority, uncertainty(e), e.id))

        non_expert = user.expertise is Expertise.NON_EXPERT
        mode = TaskMode.NON_EXPERT_SINGLE if non_expert else TaskMode.EXPERT_BULK
        selected = candidates[: 1 if non_expert else max(0, limit)]

        if not non_expert:
            # group contiguously by lemma, lemma blocks in queue order
            first_seen: dict[int, int] = {}
            for i, e in enumerate(selected):
                first_seen.setdefault(e.lemma, i)
            selected.sort(
                key=lambda e: (first_seen[e.lemma], queue_key(e.priority, uncertainty(e), e.id))
            )

        items = []
        for e in selected:
            question = None
            if non_expert:
                template = self.repo.question_for_features(variety, e.features)
                if template is not None:
                    lemma = self.repo.get_lemma(e.lemma)
                    question = template.text.replace(
                        "[LEMMA]", lemma.gloss or lemma.citation_form
                    )
            items.append(
                TaskQueueItem(
                    entry=e,
                    priority=e.priority,
                    uncertainty=uncertainty(e),
                    mode=mode,
                    presentation=self.build_presentation(
                        e, variety, predictions.get(e.id)
                    ),
                    question=question,
                )
            )
        return items

    def build_presentation(
        self, entry: WordformEntry, variety: int, neural_prediction=None
    ) -> Presentation:
        """Ensemble of whatever sources currently have an opinion on a cell;
        recomputed at read time from the newest model snapshot."""
        suggestions: list[Suggestion] = []
        if entry.status is Status.SUGGESTED and entry.source is Source.RULE and entry.form:
            suggestions.append(Suggestion(entry.form, Source.RULE, RULE_CONFIDENCE))
        if neural_prediction is None:
            model = self.models.get(variety)
            if model is not None and self.phase(variety) is Phase.ACTIVE_LEARNING:
                lemma = self.repo.get_lemma(entry.lemma)
                if lemma and 1 in lemma.stems:
                    neural_prediction = model.predict(lemma, entry.features)
        if neural_prediction is not None and neural_prediction.form:
            suggestions.append(
                Suggestion(
                    neural_prediction.form,
                    Source.NEURAL,
                    1.0 - neural_prediction.uncertainty,
                )
            )
        if self.provider is not None:
            llm_suggestion = self.suggestions.get_or_schedule(
                entry, lambda: self._llm_suggest(entry, variety)
            )
            if llm_suggestion is not None:
                suggestions.append(llm_suggestion)
        return aggregate(suggestions)

    def _llm_suggest(self, entry: WordformEntry, variety: int) -> Optional[Suggestion]:
        lemma = self.repo.get_lemma(entry.lemma)
        var = self.repo.get_variety(variety)
        if lemma is None or var is None:
            return None
        return llm.suggest(
            entry, lemma.citation_form, lemma.stems, self.repo,
            self.provider, var, self.config.suggester,
        )

    # lifecycle operations

    def _load(self, entry_id: int, expected_version: Optional[int]) -> WordformEntry:
        entry = self.repo.get_entry(entry_id)
        if entry is None:
            raise NotFound(f"no entry {entry_id}")
        if expected_version is not None and expected_version != entry.version:
            raise StaleVersion(
                f"entry {entry_id}: stored version {entry.version}, "
                f"expected {expected_version}"
            )
        return entry

    def submit_form(
        self, user: User, entry_id: int, form: str,
        expected_version: Optional[int] = None,
    ) -> WordformEntry:
        entry = self._load(entry_id, expected_version)
        if entry.status not in (Status.EMPTY, Status.SUGGESTED):
            raise InvalidState(f"cannot submit over status {entry.status.value}")
        trimmed = form.strip()
        if not trimmed:
            raise EmptyForm("submitted form is empty")
        unchanged = entry.form is not None and _norm(entry.form) == _norm(trimmed)
        updated = entry.evolve(
            user=user.id,
            form=trimmed,
            status=Status.SUBMITTED,
            source=entry.source if unchanged else Source.HUMAN,
            votes=entry.votes + (Vote(user.id, trimmed),),
        )
        return self.repo.save_entry_cas(updated, entry.version)

    def verify_form(
        self, user: User, entry_id: int, agree: bool,
        alternative: Optional[str] = None,
        expected_version: Optional[int] = None,
    ) -> WordformEntry:
        entry = self._load(entry_id, expected_version)
        if entry.status not in (Status.SUBMITTED, Status.FLAGGED):
            raise InvalidState(f"cannot verify status {entry.status.value}")
        if entry.votes and entry.votes[0].user == user.id:
            raise SelfVerification(
                f"user {user.id} submitted entry {entry.id} and cannot verify it"
            )
        alt = alternative.strip() if alternative else None
        if not agree and not alt:
            raise EmptyForm("disagreement requires an alternative form")
        if alt and _norm(alt) == _norm(entry.form or ""):
            agree, alt = True, None  # proposing the stored form is agreement

        if agree:
            distinct = {_norm(v.form) for v in entry.votes} | {_norm(entry.form or "")}
            updated = entry.evolve(
                user=user.id,
                votes=entry.votes + (Vote(user.id, entry.form),),
                status=Status.VERIFIED
                if entry.status is Status.SUBMITTED and len(distinct) == 1
                else entry.status,
            )
        else:
            updated = entry.evolve(
                user=user.id,
                votes=entry.votes + (Vote(user.id, alt),),
                status=Status.FLAGGED,
            )
        return self.repo.save_entry_cas(updated, entry.version)

    def resolve_flag(self, entry_id: int) -> Resolution:
        """Consensus among designated experts: a strict majority of the latest
        vote per expert resolves; a tie or fewer than quorum votes escalates."""
        entry = self.repo.get_entry(entry_id)
        if entry is None:
            raise NotFound(f"no entry {entry_id}")
        if entry.status is not Status.FLAGGED:
            raise NotFlagged(f"entry {entry_id} has status {entry.status.value}")

        latest: dict[int, str] = {}
        for vote in entry.votes:
            voter = self.repo.get_user(vote.user)
            if voter is not None and voter.designated_expert:
                latest[vote.user] = _norm(vote.form)
        tally = Counter(latest.values())

        if len(latest) < self.config.expert_quorum:
            self._mark_escalated(entry)
            return Resolution("escalated", None, dict(tally))
        winner, top = tally.most_common(1)[0]
        is_tie = list(tally.values()).count(top) > 1
        if is_tie or top * 2 <= sum(tally.values()):
            self._mark_escalated(entry)
            return Resolution("escalated", None, dict(tally))

        resolved = self.repo.save_entry_cas(
            entry.evolve(user=None, status=Status.RESOLVED, form=winner,
                         source=entry.source if _norm(entry.form or "") == winner else Source.HUMAN,
                         escalated=False),
            entry.version,
        )
        self.repo.save_entry_cas(
            resolved.evolve(user=None, status=Status.VERIFIED), resolved.version
        )
        return Resolution("resolved", winner, dict(tally))

    def _mark_escalated(self, entry: WordformEntry) -> None:
        if not entry.escalated:
            self.repo.save_entry_cas(
                entry.evolve(user=None, escalated=True), entry.version
            )

    def linguist_resolve(
        self, user: User, entry_id: int, form: str,
        expected_version: Optional[int] = None,
    ) -> WordformEntry:
        """Final adjudication of a flagged entry; writes a human-sourced form."""
        if user.role is not Role.LINGUIST:
            raise Forbidden("only linguists adjudicate escalations")
        entry = self._load(entry_id, expected_version)
        if entry.status is not Status.FLAGGED:
            raise InvalidState(f"cannot adjudicate status {entry.status.value}")
        trimmed = form.strip()
        if not trimmed:
            raise EmptyForm("adjudicated form is empty")
        updated = entry.evolve(
            user=user.id,
            form=trimmed,
            status=Status.VERIFIED,
            source=Source.HUMAN,
            escalated=False,
        )
        return self.repo.save_entry_cas(updated, entry.version)

    def escalations(self, variety: int) -> list[WordformEntry]:
        return [
            e
            for e in self.repo.query_cells(variety, status=Status.FLAGGED, page_size=1000)
            if e.escalated
        ]

    # retraining

    def maybe_retrain(self, variety: int, synchronous: bool = True) -> Optional[TrainingJob]:
        """Launch a training job when enough new verified data accumulated;
        at most one job per variety runs at a time."""
        verified = self.repo.verified_count(variety)
        last_trained, running = self.repo.training_state(variety)
        if running:
            return None
        if verified < self.config.n_train or verified - last_trained < self.config.delta_n:
            return None
        if not self.repo.try_begin_training(variety):
            return None
        if synchronous:
            return self._run_training(variety, verified)
        thread = threading.Thread(
            target=self._run_training, args=(variety, verified), daemon=True
        )
        thread.start()
        return TrainingJob(variety, verified, ())

    def force_retrain(self, variety: int) -> Optional[TrainingJob]:
        """Unconditional retraining (operator action); still exclusive."""
        if not self.repo.try_begin_training(variety):
            return None
        return self._run_training(variety, self.repo.verified_count(variety))

    def _run_training(self, variety: int, verified: int) -> Optional[TrainingJob]:
        try:
            examples = self.training_examples(variety)
            model, curve = train(
                examples, seed=self.config.train_seed, config=self.config.train
            )
            self.models.set(variety, model)
            self.repo.finish_training(variety, verified, None)
            return TrainingJob(variety, len(examples), tuple(curve))
        except Exception:
            log.exception("training failed for variety %s", variety)
            self.repo.finish_training(variety, 0, None)
            return None

    def training_examples(self, variety: int):
        examples = []
        offset = 0
        while True:
            page = self.repo.query_cells(
                variety, status=Status.VERIFIED, page_size=1000, offset=offset
            )
            if not page:
                break
            for entry in page:
                lemma = self.repo.get_lemma(entry.lemma)
                if lemma is not None and 1 in lemma.stems and entry.form:
                    examples.append(training_example(lemma, entry.features, entry.form))
            offset += len(page)
        return examples
