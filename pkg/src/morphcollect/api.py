"""HTTP interface for the linguist and speaker workflows.

Every state transition reachable here delegates to the workflow module; there
are no API-only side channels. Mutations carry the entry version from the
client's last read and fail with a 409 StaleVersion on conflict. Module error
codes map one-to-one onto HTTP responses.
"""
from __future__ import annotations

import logging
from typing import Optional

from fastapi import Depends, FastAPI, Header, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from . import errors as err
from .config import AppConfig
from .domain import (
    Expertise,
    Role,
    Slot,
    Status,
    User,
    canonicalize_featureset,
    clone_variety,
)
from .ensemble import tag_sources
from .ioformats import (
    MATERIAL_KINDS,
    export_materials,
    export_unimorph,
    import_materials,
    material_filename,
)
from .llm import HttpCompletionProvider, SuggesterConfig
from .patterns import blank_table, expand_paradigm
from .storage import Repository
from .workflow import Workflow, WorkflowConfig

log = logging.getLogger(__name__)

# one HTTP status per module error code; completeness is asserted by tests
ERROR_STATUS: dict[str, int] = {
    "NotFound": 404,
    "UnknownVariety": 404,
    "NoExemplars": 404,
    "StaleVersion": 409,
    "InvalidState": 409,
    "NotFlagged": 409,
    "DuplicateSource": 409,
    "DuplicateFeatureSet": 409,
    "DependentEntriesExist": 409,
    "InsufficientData": 409,
    "UntrainedModel": 409,
    "Forbidden": 403,
    "SelfVerification": 403,
    "NotASpeaker": 403,
    "EmptyInput": 422,
    "NoPosTag": 422,
    "UnknownTag": 422,
    "UnbalancedBrace": 422,
    "UnknownPlaceholder": 422,
    "ZeroStemIndex": 422,
    "MissingStem": 422,
    "MissingLayerMorpheme": 422,
    "RegexCompileError": 422,
    "EmptyForm": 422,
    "EmptyReply": 422,
    "EmptyReference": 422,
    "PageTooLarge": 422,
    "MissingHeader": 422,
    "EncodingError": 422,
    "FieldCharError": 422,
    "MalformedGold": 422,
    "ModelFormatError": 422,
    "UsageError": 400,
    "ConfigError": 500,
    "MorphError": 500,
}


class CloneBody(BaseModel):
    name: str


class ClassBody(BaseModel):
    name: str
    pos: str


class SlotBody(BaseModel):
    features: list[str]
    pattern: Optional[str] = None
    priority: int = 0


class StructureBody(BaseModel):
    name: str
    inflection_class: int
    slots: list[SlotBody]
    layer_refs: list[int] = []


class MorphemeBody(BaseModel):
    fragment: str
    features: list[str]


class LayerBody(BaseModel):
    name: str
    morphemes: list[MorphemeBody]


class RuleBody(BaseModel):
    pattern: str
    replacement: str
    order: int
    scope: Optional[int] = None


class LemmaBody(BaseModel):
    citation_form: str
    gloss: str = ""
    inflection_class: int
    stems: dict[int, str] = {}
    priority: int = 0


class QuestionBody(BaseModel):
    features: list[str]
    text: str
    draft: bool = False


class ImportBody(BaseModel):
    document: str
    all_or_nothing: bool = False


class ExpandBody(BaseModel):
    structure_id: int
    lemma_id: Optional[int] = None


class FormBody(BaseModel):
    form: str
    version: int


class VerificationBody(BaseModel):
    agree: bool
    alternative: Optional[str] = None
    version: int


class ResolutionBody(BaseModel):
    form: str
    version: int


class TrainBody(BaseModel):
    seed: Optional[int] = None


def entry_json(entry) -> dict:
    return {
        "id": entry.id,
        "lemma": entry.lemma,
        "features": entry.features.canonical(),
        "form": entry.form,
        "status": entry.status.value,
        "source": entry.source.value,
        "version": entry.version,
        "escalated": entry.escalated,
        "priority": entry.priority,
        "votes": [{"user": v.user, "form": v.form} for v in entry.votes],
    }


def presentation_json(presentation) -> dict:
    return {
        "unanimous": presentation.unanimous,
        "options": [
            {
                "form": record.form,
                "sources": list(record.labels),
                "high_confidence": record.high_confidence,
            }
            for record in tag_sources(presentation)
        ],
    }


def create_app(repo: Repository, flow: Workflow, config: Optional[AppConfig] = None) -> FastAPI:
    app = FastAPI(title="morphcollect", version="0.1.0")

    @app.exception_handler(err.MorphError)
    async def morph_error_handler(request: Request, exc: err.MorphError):
        status = ERROR_STATUS.get(exc.code, 500)
        return JSONResponse(
            status_code=status, content={"code": exc.code, "message": str(exc)}
        )

    def current_user(authorization: str = Header(default="")) -> User:
        if not authorization.startswith("Bearer "):
            raise err.Forbidden("missing bearer token")
        user = repo.get_user_by_token(authorization.removeprefix("Bearer "))
        if user is None:
            raise err.Forbidden("unknown or expired token")
        return user

    def require_linguist(user: User = Depends(current_user)) -> User:
        if user.role is not Role.LINGUIST:
            raise err.Forbidden("linguist role required")
        return user

    def get_variety_or_404(variety_id: int):
        variety = repo.get_variety(variety_id)
        if variety is None:
            raise err.UnknownVariety(f"no variety {variety_id}")
        return variety

    @app.get("/me")
    def me(user: User = Depends(current_user)):
        return {
            "id": user.id,
            "name": user.name,
            "role": user.role.value,
            "expertise": user.expertise.value,
            "designated_expert": user.designated_expert,
        }

    # varieties

    @app.get("/varieties")
    def list_varieties(user: User = Depends(current_user)):
        return [
            {
                "id": v.id,
                "name": v.name,
                "meta_language": v.meta_language,
                "parent_variety": v.parent_variety,
                "rtl": v.rtl,
            }
            for v in repo.list_varieties()
        ]

    @app.post("/varieties", status_code=201)
    def create_variety(
        body: dict, user: User = Depends(require_linguist)
    ):
        vid = repo.add_variety(
            body["name"],
            meta_language=body.get("meta_language", "English"),
            rtl=bool(body.get("rtl", False)),
        )
        return {"id": vid}

    @app.post("/varieties/{variety_id}/clone", status_code=201)
    def clone(variety_id: int, body: CloneBody, user: User = Depends(require_linguist)):
        return {"id": clone_variety(repo, variety_id, body.name)}

    # materials

    @app.get("/varieties/{variety_id}/classes")
    def list_classes(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        return [
            {"id": k.id, "name": k.name, "pos": k.pos}
            for k in repo.list_classes(variety_id)
        ]

    @app.post("/varieties/{variety_id}/classes", status_code=201)
    def create_class(
        variety_id: int, body: ClassBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        return {"id": repo.add_class(variety_id, body.name, body.pos)}

    @app.get("/varieties/{variety_id}/structures")
    def list_structures(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        return [
            {
                "id": s.id,
                "name": s.name,
                "inflection_class": s.inflection_class,
                "layer_refs": list(s.layer_refs),
                "slots": [
                    {
                        "features": slot.features.canonical(),
                        "pattern": slot.pattern,
                        "priority": slot.priority,
                    }
                    for slot in s.slots
                ],
            }
            for s in repo.list_structures(variety_id)
        ]

    @app.post("/varieties/{variety_id}/structures", status_code=201)
    def create_structure(
        variety_id: int, body: StructureBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        slots = []
        for s in body.slots:
            features = canonicalize_featureset(s.features)
            if s.pattern:
                from .patterns import parse_template

                parse_template(s.pattern)
            slots.append(Slot(features, s.pattern, s.priority))
        sid = repo.add_structure(
            variety_id, body.inflection_class, body.name, tuple(slots),
            tuple(body.layer_refs),
        )
        return {"id": sid}

    @app.get("/varieties/{variety_id}/layers")
    def list_layers(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        return [
            {
                "id": l.id,
                "name": l.name,
                "morphemes": [
                    {"fragment": m.fragment, "features": m.features.canonical()}
                    for m in l.morphemes
                ],
            }
            for l in repo.list_layers(variety_id)
        ]

    @app.post("/varieties/{variety_id}/layers", status_code=201)
    def create_layer(
        variety_id: int, body: LayerBody, user: User = Depends(require_linguist)
    ):
        from .domain import ReusableMorpheme

        get_variety_or_404(variety_id)
        morphemes = tuple(
            ReusableMorpheme(m.fragment, canonicalize_featureset(m.features))
            for m in body.morphemes
        )
        return {"id": repo.add_layer(variety_id, body.name, morphemes)}

    @app.get("/varieties/{variety_id}/rules")
    def list_rules(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        return [
            {
                "id": r.id,
                "pattern": r.pattern,
                "replacement": r.replacement,
                "order": r.order,
                "scope": r.scope,
            }
            for r in repo.list_rules(variety_id)
        ]

    @app.post("/varieties/{variety_id}/rules", status_code=201)
    def create_rule(
        variety_id: int, body: RuleBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        return {
            "id": repo.add_rule(
                variety_id, body.pattern, body.replacement, body.order, body.scope
            )
        }

    @app.get("/varieties/{variety_id}/lexicon")
    def list_lexicon(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        return [
            {
                "id": l.id,
                "citation_form": l.citation_form,
                "gloss": l.gloss,
                "inflection_class": l.inflection_class,
                "stems": l.stems,
                "priority": l.priority,
            }
            for l in repo.list_lemmas(variety_id)
        ]

    @app.post("/varieties/{variety_id}/lexicon", status_code=201)
    def create_lemma(
        variety_id: int, body: LemmaBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        return {
            "id": repo.add_lemma(
                variety_id, body.citation_form, body.gloss,
                body.inflection_class, body.stems, body.priority,
            )
        }

    @app.delete("/varieties/{variety_id}/lexicon/{lemma_id}")
    def delete_lemma(
        variety_id: int, lemma_id: int, user: User = Depends(require_linguist)
    ):
        repo.delete_lemma(lemma_id)
        return {"deleted": lemma_id}

    @app.get("/varieties/{variety_id}/question-templates")
    def list_questions(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        return [
            {
                "id": t.id,
                "features": t.features.canonical(),
                "text": t.text,
                "draft": t.draft,
            }
            for t in repo.list_question_templates(variety_id)
        ]

    @app.post("/varieties/{variety_id}/question-templates", status_code=201)
    def create_question(
        variety_id: int, body: QuestionBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        features = canonicalize_featureset(body.features)
        try:
            tid = repo.add_question_template(variety_id, features, body.text, body.draft)
        except ValueError as e:
            raise err.EmptyInput(str(e))
        return {"id": tid}

    # import / export

    @app.post("/varieties/{variety_id}/import/{kind}")
    def import_kind(
        variety_id: int, kind: str, body: ImportBody,
        user: User = Depends(require_linguist),
    ):
        get_variety_or_404(variety_id)
        if kind not in MATERIAL_KINDS:
            raise err.UsageError(f"unknown material kind {kind!r}")
        if kind == "lexicon":
            from .ioformats import import_lexicon

            count, row_errors = import_lexicon(
                repo, variety_id, body.document, body.all_or_nothing
            )
        else:
            results = import_materials(repo, variety_id, {kind: body.document})
            count, row_errors = results[kind]
        return {
            "imported": count,
            "errors": [{"line": e.line, "reason": e.reason} for e in row_errors],
        }

    @app.get("/varieties/{variety_id}/export/unimorph")
    def get_unimorph(variety_id: int, user: User = Depends(current_user)):
        variety = get_variety_or_404(variety_id)
        return PlainTextResponse(
            export_unimorph(repo, variety_id),
            media_type="text/tab-separated-values",
            headers={
                "Content-Disposition":
                    f'attachment; filename="{variety.name}.unimorph.tsv"'
            },
        )

    @app.get("/varieties/{variety_id}/export/materials")
    def get_materials(variety_id: int, user: User = Depends(current_user)):
        variety = get_variety_or_404(variety_id)
        bundle = export_materials(repo, variety_id)
        return {
            "files": {
                material_filename(variety.name, kind): doc
                for kind, doc in bundle.items()
            }
        }

    @app.get("/varieties/{variety_id}/export/blank-tables")
    def get_blank_tables(
        variety_id: int, structure_id: int, user: User = Depends(current_user)
    ):
        get_variety_or_404(variety_id)
        structure = repo.get_structure(structure_id)
        if structure is None:
            raise err.NotFound(f"no structure {structure_id}")
        lemmas = [
            l for l in repo.list_lemmas(variety_id)
            if l.inflection_class == structure.inflection_class
        ]
        doc = blank_table(structure, repo.list_layers(variety_id), lemmas)
        return PlainTextResponse(doc, media_type="text/tab-separated-values")

    # expansion and paradigms

    @app.post("/varieties/{variety_id}/expand")
    def expand(
        variety_id: int, body: ExpandBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        structure = repo.get_structure(body.structure_id)
        if structure is None:
            raise err.NotFound(f"no structure {body.structure_id}")
        layers = repo.list_layers(variety_id)
        rules = repo.list_rules(variety_id)
        lemmas = (
            [repo.get_lemma(body.lemma_id)]
            if body.lemma_id is not None
            else [
                l for l in repo.list_lemmas(variety_id)
                if l.inflection_class == structure.inflection_class
            ]
        )
        created = 0
        for lemma in lemmas:
            if lemma is None:
                raise err.NotFound("no such lemma")
            created += repo.add_entries(
                lemma.id, expand_paradigm(lemma, structure, layers, rules)
            )
        return {"created": created}

    @app.get("/varieties/{variety_id}/paradigm/{lemma_id}")
    def paradigm(variety_id: int, lemma_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        lemma = repo.get_lemma(lemma_id)
        if lemma is None:
            raise err.NotFound(f"no lemma {lemma_id}")
        cells = repo.query_cells(variety_id, lemma=lemma_id, page_size=1000)
        return {
            "lemma": {
                "id": lemma.id,
                "citation_form": lemma.citation_form,
                "gloss": lemma.gloss,
            },
            "cells": [entry_json(e) for e in cells],
        }

    # speaker workflow

    @app.get("/varieties/{variety_id}/tasks/next")
    def tasks_next(
        variety_id: int, limit: int = 10, user: User = Depends(current_user)
    ):
        get_variety_or_404(variety_id)
        items = flow.next_tasks(user, variety_id, limit)
        return [
            {
                "entry": entry_json(item.entry),
                "priority": item.priority,
                "uncertainty": item.uncertainty,
                "mode": item.mode.value,
                "question": item.question,
                "presentation": presentation_json(item.presentation),
            }
            for item in items
        ]

    @app.get("/varieties/{variety_id}/review/next")
    def review_next(
        variety_id: int, limit: int = 10, user: User = Depends(current_user)
    ):
        """Cells awaiting verification by someone other than their submitter."""
        get_variety_or_404(variety_id)
        if user.role is not Role.SPEAKER:
            raise err.NotASpeaker("review queue is speaker-facing")
        out = []
        for status in (Status.SUBMITTED, Status.FLAGGED):
            for e in repo.query_cells(variety_id, status=status, page_size=1000):
                if e.votes and e.votes[0].user == user.id:
                    continue
                out.append(entry_json(e))
                if len(out) >= limit:
                    return out
        return out

    @app.get("/entries/{entry_id}/suggestions")
    def suggestions(entry_id: int, user: User = Depends(current_user)):
        entry = repo.get_entry(entry_id)
        if entry is None:
            raise err.NotFound(f"no entry {entry_id}")
        lemma = repo.get_lemma(entry.lemma)
        presentation = flow.build_presentation(entry, lemma.variety)
        return presentation_json(presentation)

    @app.post("/entries/{entry_id}/form")
    def post_form(entry_id: int, body: FormBody, user: User = Depends(current_user)):
        updated = flow.submit_form(user, entry_id, body.form, body.version)
        self_variety = repo.get_lemma(updated.lemma).variety
        flow.maybe_retrain(self_variety)
        return entry_json(updated)

    @app.post("/entries/{entry_id}/verification")
    def post_verification(
        entry_id: int, body: VerificationBody, user: User = Depends(current_user)
    ):
        updated = flow.verify_form(
            user, entry_id, body.agree, body.alternative, body.version
        )
        flow.maybe_retrain(repo.get_lemma(updated.lemma).variety)
        return entry_json(updated)

    @app.post("/entries/{entry_id}/resolve")
    def post_resolve(entry_id: int, user: User = Depends(current_user)):
        result = flow.resolve_flag(entry_id)
        return {
            "outcome": result.outcome,
            "winning_form": result.winning_form,
            "tally": result.tally,
            "entry": entry_json(repo.get_entry(entry_id)),
        }

    @app.get("/varieties/{variety_id}/escalations")
    def escalations(variety_id: int, user: User = Depends(require_linguist)):
        get_variety_or_404(variety_id)
        return [entry_json(e) for e in flow.escalations(variety_id)]

    @app.post("/entries/{entry_id}/resolution")
    def post_resolution(
        entry_id: int, body: ResolutionBody, user: User = Depends(require_linguist)
    ):
        updated = flow.linguist_resolve(user, entry_id, body.form, body.version)
        return entry_json(updated)

    # training

    @app.post("/varieties/{variety_id}/train")
    def force_train(
        variety_id: int, body: TrainBody, user: User = Depends(require_linguist)
    ):
        get_variety_or_404(variety_id)
        if body.seed is not None:
            flow.config.train_seed = body.seed
        examples = flow.training_examples(variety_id)
        if len(examples) < 2:
            raise err.InsufficientData(
                f"only {len(examples)} verified training examples"
            )
        job = flow.force_retrain(variety_id)
        if job is None:
            raise err.InvalidState("a training job is already running")
        return {
            "variety": variety_id,
            "examples": job.example_count,
            "final_loss": job.loss_curve[-1] if job.loss_curve else None,
        }

    @app.get("/varieties/{variety_id}/training-status")
    def training_status(variety_id: int, user: User = Depends(current_user)):
        get_variety_or_404(variety_id)
        last_trained, running = repo.training_state(variety_id)
        return {
            "phase": flow.phase(variety_id).value,
            "verified": repo.verified_count(variety_id),
            "last_trained_verified": last_trained,
            "running": running,
            "has_model": flow.models.get(variety_id) is not None,
        }

    if config and config.frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True), name="ui")

    return app


def build_workflow(repo: Repository, config: AppConfig) -> Workflow:
    provider = None
    if config.provider_endpoint:
        provider = HttpCompletionProvider(
            config.provider_endpoint, config.provider_model, config.provider_key
        )
    flow_config = WorkflowConfig(
        n_train=config.n_train,
        delta_n=config.delta_n,
        expert_quorum=config.expert_quorum,
        train_seed=config.train_seed,
        suggester=SuggesterConfig(shots=config.shots, min_shots=config.min_shots),
    )
    return Workflow(repo, flow_config, provider=provider)


def seed_users(repo: Repository, config: AppConfig) -> None:
    for seed in config.users:
        if seed.token and repo.get_user_by_token(seed.token) is not None:
            continue
        repo.add_user(
            seed.name,
            Role(seed.role),
            Expertise(seed.expertise),
            seed.designated_expert,
            seed.token or None,
        )


def serve(config: AppConfig) -> None:
    """Build the app from config and block serving it."""
    import uvicorn

    repo = Repository(config.database)
    seed_users(repo, config)
    flow = build_workflow(repo, config)
    app = create_app(repo, flow, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
