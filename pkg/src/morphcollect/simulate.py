"""Offline elicitation simulation on a gold dataset.

The simulated annotator is infallible: selected cells are answered with the
gold form and marked verified. Each round the configured sources produce
fresh suggestions for the selected cells (and optionally for a fixed held-out
evaluation set), their CER against gold is recorded, and the neural source
retrains when the verified-count thresholds are hit. Identical seeds yield
byte-identical round tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import Lemma, canonicalize_featureset
from .errors import MalformedGold
from .ioformats import parse_unimorph
from .metrics import cer
from .neural import TrainConfig, encode, train, training_example
from .patterns import apply_morphophonology, parse_template, render
from .domain import MorphophonRule


@dataclass(frozen=True)
class GoldCell:
    id: int
    lemma: str
    stem: str
    features: str  # canonical serialization
    gold_form: str
    priority: int = 0


@dataclass
class SimulationRun:
    cells: list[GoldCell]
    policy: str  # "uncertainty" | "random" | "priority"
    seed: int
    round_size: int
    budget: int
    patterns: dict[str, str] = field(default_factory=dict)  # features -> template
    rewrites: Sequence[tuple[str, str]] = ()  # ordered (pattern, replacement)
    use_rules: bool = True
    use_neural: bool = True
    mock_llm: Optional[Callable[[GoldCell], Optional[str]]] = None
    n_train: int = 100
    delta_n: int = 100
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_cells: list[GoldCell] = field(default_factory=list)

    def __post_init__(self):
        if self.policy not in ("uncertainty", "random", "priority"):
            raise ValueError(f"unknown policy {self.policy!r}")


@dataclass(frozen=True)
class RoundRow:
    round: int
    source: str
    n_cells: int
    cer_percent: float


@dataclass
class SimulationResult:
    rows: list[RoundRow]
    eval_cer_by_round: list[dict[str, float]]  # held-out CER per source
    annotated: int

    def to_tsv(self) -> str:
        lines = ["round\tsource\tn_cells\tcer_percent"]
        for r in self.rows:
            lines.append(f"{r.round}\t{r.source}\t{r.n_cells}\t{r.cer_percent:.2f}")
        return "\n".join(lines) + "\n"


def load_gold_cells(document, priorities: Optional[dict[str, int]] = None) -> list[GoldCell]:
    """Gold cells from a UniMorph document; the lemma doubles as stem 1."""
    rows = parse_unimorph(document)
    if not rows:
        raise MalformedGold("gold dataset is empty")
    return [
        GoldCell(i, lemma, lemma, features, form, (priorities or {}).get(lemma, 0))
        for i, (lemma, form, features) in enumerate(rows)
    ]


def _rule_objects(rewrites: Sequence[tuple[str, str]]) -> list[MorphophonRule]:
    return [
        MorphophonRule(i + 1, 0, pattern, replacement, i + 1, None)
        for i, (pattern, replacement) in enumerate(rewrites)
    ]


class _RuleSource:
    name = "rules"

    def __init__(self, patterns: dict[str, str], rewrites, enabled_rewrites: bool):
        self.templates = {k: parse_template(v) for k, v in patterns.items()}
        self.rules = _rule_objects(rewrites) if enabled_rewrites else []

    def predict(self, cells: Sequence[GoldCell]) -> dict[int, str]:
        out = {}
        for cell in cells:
            template = self.templates.get(cell.features)
            if template is None:
                continue
            lemma = Lemma(cell.id, 0, cell.lemma, cell.lemma, 0, {1: cell.stem})
            raw = render(template, lemma)
            out[cell.id] = apply_morphophonology(raw, self.rules).surface
        return out


class _NeuralSource:
    name = "neural"

    def __init__(self, config: TrainConfig):
        self.config = config
        self.model = None

    def predict_with_uncertainty(self, cells: Sequence[GoldCell]):
        if self.model is None or not cells:
            return {}, {}
        sequences = [
            encode(
                Lemma(c.id, 0, c.lemma, c.lemma, 0, {1: c.stem}),
                canonicalize_featureset(c.features.split(";")),
            )
            for c in cells
        ]
        predictions = self.model.predict_encoded(sequences)
        forms = {c.id: p.form for c, p in zip(cells, predictions)}
        uncertainty = {c.id: p.uncertainty for c, p in zip(cells, predictions)}
        return forms, uncertainty

    def predict(self, cells: Sequence[GoldCell]) -> dict[int, str]:
        return self.predict_with_uncertainty(cells)[0]

    def retrain(self, verified: Sequence[GoldCell], seed: int):
        examples = [
            training_example(
                Lemma(c.id, 0, c.lemma, c.lemma, 0, {1: c.stem}),
                canonicalize_featureset(c.features.split(";")),
                c.gold_form,
            )
            for c in verified
        ]
        self.model, _ = train(examples, seed=seed, config=self.config)


def simulate(run: SimulationRun) -> SimulationResult:
    rng = np.random.default_rng(run.seed)
    rule_source = _RuleSource(run.patterns, run.rewrites, run.use_rules) if run.patterns else None
    neural = _NeuralSource(run.train) if run.use_neural else None

    remaining = {c.id: c for c in run.cells}
    verified: list[GoldCell] = []
    last_trained = 0
    rows: list[RoundRow] = []
    eval_curve: list[dict[str, float]] = []
    round_no = 0
    spent = 0

    while spent < run.budget and remaining:
        round_no += 1
        take = min(run.round_size, run.budget - spent, len(remaining))
        pool = list(remaining.values())

        if run.policy == "random":
            order = list(rng.permutation(len(pool)))
            chosen = [pool[i] for i in order[:take]]
        elif run.policy == "priority":
            chosen = sorted(pool, key=lambda c: (-c.priority, c.id))[:take]
        else:  # uncertainty; id order while no model exists (cold start)
            if neural is not None and neural.model is not None:
                _, uncertainty = neural.predict_with_uncertainty(pool)
                chosen = sorted(pool, key=lambda c: (-uncertainty[c.id], c.id))[:take]
            else:
                chosen = sorted(pool, key=lambda c: (-c.priority, c.id))[:take]

        sources = [s for s in (rule_source, neural) if s is not None]
        for source in sources:
            predictions = source.predict(chosen)
            pairs = [
                (predictions[c.id], c.gold_form) for c in chosen if c.id in predictions
            ]
            if pairs:
                rows.append(
                    RoundRow(round_no, source.name, len(pairs), cer(pairs).cer_percent)
                )
        if run.mock_llm is not None:
            pairs = []
            for c in chosen:
                answer = run.mock_llm(c)
                if answer is not None:
                    pairs.append((answer, c.gold_form))
            if pairs:
                rows.append(RoundRow(round_no, "llm", len(pairs), cer(pairs).cer_percent))

        for c in chosen:
            del remaining[c.id]
            verified.append(c)
        spent += len(chosen)

        if (
            neural is not None
            and len(verified) >= run.n_train
            and len(verified) - last_trained >= run.delta_n
        ):
            neural.retrain(verified, seed=run.seed)
            last_trained = len(verified)

        eval_scores: dict[str, float] = {}
        if run.eval_cells:
            for source in sources:
                predictions = source.predict(run.eval_cells)
                pairs = [
                    (predictions[c.id], c.gold_form)
                    for c in run.eval_cells
                    if c.id in predictions
                ]
                if pairs:
                    eval_scores[source.name] = cer(pairs).cer_percent
        eval_curve.append(eval_scores)

    return SimulationResult(rows=rows, eval_cer_by_round=eval_curve, annotated=spent)
