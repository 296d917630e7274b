"""Relational persistence on sqlite with forward-only migrations.

Third normal form mirroring the domain types; feature sets are stored as
their canonical serialization plus a tag join table for tag-level queries.
Entry mutation goes through compare-and-set only; history rows are append
only. One connection guarded by a lock serves concurrent request handlers.
"""
from __future__ import annotations

import sqlite3
import threading
import time
from typing import Optional, Sequence

from .domain import (
    Expertise,
    FeatureSet,
    HistoryRecord,
    InflectionClass,
    Lemma,
    MorphophonRule,
    ParadigmStructure,
    QuestionTemplate,
    ReusableLayer,
    ReusableMorpheme,
    Role,
    Slot,
    Source,
    Status,
    User,
    Variety,
    Vote,
    WordformEntry,
)
from .errors import DependentEntriesExist, NotFound, PageTooLarge, StaleVersion
from .llm import FewShotExemplar
from .patterns import ExpandedCell

MAX_PAGE_SIZE = 1000

MIGRATIONS: list[str] = [
    """
    CREATE TABLE varieties (
        id INTEGER PRIMARY KEY,
        name TEXT NOT NULL UNIQUE,
        meta_language TEXT NOT NULL DEFAULT 'English',
        parent_variety INTEGER REFERENCES varieties(id),
        rtl INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE users (
        id INTEGER PRIMARY KEY,
        name TEXT NOT NULL,
        role TEXT NOT NULL,
        expertise TEXT NOT NULL,
        designated_expert INTEGER NOT NULL DEFAULT 0,
        token TEXT UNIQUE
    );
    CREATE TABLE inflection_classes (
        id INTEGER PRIMARY KEY,
        variety INTEGER NOT NULL REFERENCES varieties(id),
        name TEXT NOT NULL,
        pos TEXT NOT NULL,
        UNIQUE (variety, name)
    );
    CREATE TABLE layers (
        id INTEGER PRIMARY KEY,
        variety INTEGER NOT NULL REFERENCES varieties(id),
        name TEXT NOT NULL,
        UNIQUE (variety, name)
    );
    CREATE TABLE morphemes (
        id INTEGER PRIMARY KEY,
        layer INTEGER NOT NULL REFERENCES layers(id) ON DELETE CASCADE,
        position INTEGER NOT NULL,
        fragment TEXT NOT NULL,
        features TEXT NOT NULL
    );
    CREATE TABLE structures (
        id INTEGER PRIMARY KEY,
        variety INTEGER NOT NULL REFERENCES varieties(id),
        inflection_class INTEGER NOT NULL REFERENCES inflection_classes(id),
        name TEXT NOT NULL,
        UNIQUE (variety, name)
    );
    CREATE TABLE slots (
        id INTEGER PRIMARY KEY,
        structure INTEGER NOT NULL REFERENCES structures(id) ON DELETE CASCADE,
        position INTEGER NOT NULL,
        features TEXT NOT NULL,
        pattern TEXT,
        priority INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE structure_layers (
        structure INTEGER NOT NULL REFERENCES structures(id) ON DELETE CASCADE,
        layer INTEGER NOT NULL REFERENCES layers(id),
        position INTEGER NOT NULL
    );
    CREATE TABLE lemmas (
        id INTEGER PRIMARY KEY,
        variety INTEGER NOT NULL REFERENCES varieties(id),
        citation_form TEXT NOT NULL,
        gloss TEXT NOT NULL DEFAULT '',
        inflection_class INTEGER NOT NULL REFERENCES inflection_classes(id),
        priority INTEGER NOT NULL DEFAULT 0,
        UNIQUE (variety, citation_form)
    );
    CREATE TABLE stems (
        lemma INTEGER NOT NULL REFERENCES lemmas(id) ON DELETE CASCADE,
        idx INTEGER NOT NULL,
        text TEXT NOT NULL,
        PRIMARY KEY (lemma, idx)
    );
    CREATE TABLE rules (
        id INTEGER PRIMARY KEY,
        variety INTEGER NOT NULL REFERENCES varieties(id),
        pattern TEXT NOT NULL,
        replacement TEXT NOT NULL,
        ord INTEGER NOT NULL,
        scope INTEGER REFERENCES inflection_classes(id)
    );
    CREATE TABLE question_templates (
        id INTEGER PRIMARY KEY,
        variety INTEGER NOT NULL REFERENCES varieties(id),
        features TEXT NOT NULL,
        text TEXT NOT NULL,
        draft INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE entries (
        id INTEGER PRIMARY KEY,
        lemma INTEGER NOT NULL REFERENCES lemmas(id) ON DELETE RESTRICT,
        features TEXT NOT NULL,
        form TEXT,
        status TEXT NOT NULL,
        source TEXT NOT NULL,
        version INTEGER NOT NULL DEFAULT 1,
        escalated INTEGER NOT NULL DEFAULT 0,
        priority INTEGER NOT NULL DEFAULT 0,
        verified_at REAL,
        UNIQUE (lemma, features)
    );
    CREATE INDEX idx_entries_features ON entries(features);
    CREATE INDEX idx_entries_status ON entries(status);
    CREATE TABLE votes (
        id INTEGER PRIMARY KEY,
        entry INTEGER NOT NULL REFERENCES entries(id) ON DELETE CASCADE,
        user INTEGER NOT NULL,
        form TEXT NOT NULL,
        position INTEGER NOT NULL
    );
    CREATE TABLE history (
        id INTEGER PRIMARY KEY,
        entry INTEGER NOT NULL REFERENCES entries(id) ON DELETE CASCADE,
        position INTEGER NOT NULL,
        form TEXT,
        status TEXT NOT NULL,
        user INTEGER,
        timestamp REAL NOT NULL
    );
    CREATE TABLE featureset_tags (
        features TEXT NOT NULL,
        position INTEGER NOT NULL,
        tag TEXT NOT NULL,
        PRIMARY KEY (features, position)
    );
    CREATE TABLE training_state (
        variety INTEGER PRIMARY KEY REFERENCES varieties(id),
        last_trained_verified INTEGER NOT NULL DEFAULT 0,
        running INTEGER NOT NULL DEFAULT 0,
        model_path TEXT
    );
    """,
]


def _fs(canonical: str) -> FeatureSet:
    return FeatureSet(tags=tuple(canonical.split(";")))


class Repository:
    def __init__(self, path: str = ":memory:"):
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._lock = threading.RLock()
        self._migrate()

    def close(self):
        self._conn.close()

    def _migrate(self):
        with self._lock, self._conn:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS schema_version (version INTEGER NOT NULL)"
            )
            row = self._conn.execute("SELECT MAX(version) FROM schema_version").fetchone()
            current = row[0] or 0
            for version, script in enumerate(MIGRATIONS, start=1):
                if version > current:
                    self._conn.executescript(script)
                    self._conn.execute(
                        "INSERT INTO schema_version (version) VALUES (?)", (version,)
                    )

    def _register_features(self, features: FeatureSet):
        canonical = features.canonical()
        self._conn.executemany(
            "INSERT OR IGNORE INTO featureset_tags (features, position, tag) VALUES (?,?,?)",
            [(canonical, i, t) for i, t in enumerate(features.tags)],
        )

    # varieties

    def add_variety(self, name, meta_language="English", parent_variety=None, rtl=False) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO varieties (name, meta_language, parent_variety, rtl) VALUES (?,?,?,?)",
                (name, meta_language, parent_variety, int(rtl)),
            )
            return cur.lastrowid

    def get_variety(self, variety_id: int) -> Optional[Variety]:
        row = self._conn.execute(
            "SELECT id, name, meta_language, parent_variety, rtl FROM varieties WHERE id=?",
            (variety_id,),
        ).fetchone()
        return Variety(row[0], row[1], row[2], row[3], bool(row[4])) if row else None

    def list_varieties(self) -> list[Variety]:
        rows = self._conn.execute(
            "SELECT id, name, meta_language, parent_variety, rtl FROM varieties ORDER BY id"
        ).fetchall()
        return [Variety(r[0], r[1], r[2], r[3], bool(r[4])) for r in rows]

    # users

    def add_user(self, name, role: Role, expertise: Expertise,
                 designated_expert=False, token=None) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO users (name, role, expertise, designated_expert, token) VALUES (?,?,?,?,?)",
                (name, role.value, expertise.value, int(designated_expert), token),
            )
            return cur.lastrowid

    def _user_from_row(self, row) -> User:
        return User(row[0], row[1], Role(row[2]), Expertise(row[3]), bool(row[4]))

    def get_user(self, user_id: int) -> Optional[User]:
        row = self._conn.execute(
            "SELECT id, name, role, expertise, designated_expert FROM users WHERE id=?",
            (user_id,),
        ).fetchone()
        return self._user_from_row(row) if row else None

    def get_user_by_token(self, token: str) -> Optional[User]:
        row = self._conn.execute(
            "SELECT id, name, role, expertise, designated_expert FROM users WHERE token=?",
            (token,),
        ).fetchone()
        return self._user_from_row(row) if row else None

    # inflection classes

    def add_class(self, variety, name, pos) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO inflection_classes (variety, name, pos) VALUES (?,?,?)",
                (variety, name, pos),
            )
            return cur.lastrowid

    def get_class(self, class_id) -> Optional[InflectionClass]:
        row = self._conn.execute(
            "SELECT id, variety, name, pos FROM inflection_classes WHERE id=?",
            (class_id,),
        ).fetchone()
        return InflectionClass(*row) if row else None

    def list_classes(self, variety) -> list[InflectionClass]:
        rows = self._conn.execute(
            "SELECT id, variety, name, pos FROM inflection_classes WHERE variety=? ORDER BY id",
            (variety,),
        ).fetchall()
        return [InflectionClass(*r) for r in rows]

    def class_by_name(self, variety, name) -> Optional[InflectionClass]:
        row = self._conn.execute(
            "SELECT id, variety, name, pos FROM inflection_classes WHERE variety=? AND name=?",
            (variety, name),
        ).fetchone()
        return InflectionClass(*row) if row else None

    # layers

    def add_layer(self, variety, name, morphemes: Sequence[ReusableMorpheme]) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO layers (variety, name) VALUES (?,?)", (variety, name)
            )
            layer_id = cur.lastrowid
            for i, m in enumerate(morphemes):
                self._conn.execute(
                    "INSERT INTO morphemes (layer, position, fragment, features) VALUES (?,?,?,?)",
                    (layer_id, i, m.fragment, m.features.canonical()),
                )
                self._register_features(m.features)
            return layer_id

    def _layer_from_row(self, row) -> ReusableLayer:
        morphemes = self._conn.execute(
            "SELECT fragment, features FROM morphemes WHERE layer=? ORDER BY position",
            (row[0],),
        ).fetchall()
        return ReusableLayer(
            row[0], row[1], row[2],
            tuple(ReusableMorpheme(m[0], _fs(m[1])) for m in morphemes),
        )

    def get_layer(self, layer_id) -> Optional[ReusableLayer]:
        row = self._conn.execute(
            "SELECT id, variety, name FROM layers WHERE id=?", (layer_id,)
        ).fetchone()
        return self._layer_from_row(row) if row else None

    def list_layers(self, variety) -> list[ReusableLayer]:
        rows = self._conn.execute(
            "SELECT id, variety, name FROM layers WHERE variety=? ORDER BY id", (variety,)
        ).fetchall()
        return [self._layer_from_row(r) for r in rows]

    def layer_by_name(self, variety, name) -> Optional[ReusableLayer]:
        row = self._conn.execute(
            "SELECT id, variety, name FROM layers WHERE variety=? AND name=?",
            (variety, name),
        ).fetchone()
        return self._layer_from_row(row) if row else None

    def replace_layer_morphemes(self, layer_id: int, morphemes: Sequence[ReusableMorpheme]):
        with self._lock, self._conn:
            self._conn.execute("DELETE FROM morphemes WHERE layer=?", (layer_id,))
            for i, m in enumerate(morphemes):
                self._conn.execute(
                    "INSERT INTO morphemes (layer, position, fragment, features) VALUES (?,?,?,?)",
                    (layer_id, i, m.fragment, m.features.canonical()),
                )
                self._register_features(m.features)

    # paradigm structures

    def add_structure(self, variety, inflection_class, name,
                      slots: Sequence[Slot], layer_refs: Sequence[int] = ()) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO structures (variety, inflection_class, name) VALUES (?,?,?)",
                (variety, inflection_class, name),
            )
            structure_id = cur.lastrowid
            for i, slot in enumerate(slots):
                self._conn.execute(
                    "INSERT INTO slots (structure, position, features, pattern, priority) VALUES (?,?,?,?,?)",
                    (structure_id, i, slot.features.canonical(), slot.pattern, slot.priority),
                )
                self._register_features(slot.features)
            for i, layer_id in enumerate(layer_refs):
                self._conn.execute(
                    "INSERT INTO structure_layers (structure, layer, position) VALUES (?,?,?)",
                    (structure_id, layer_id, i),
                )
            return structure_id

    def _structure_from_row(self, row) -> ParadigmStructure:
        slots = self._conn.execute(
            "SELECT features, pattern, priority FROM slots WHERE structure=? ORDER BY position",
            (row[0],),
        ).fetchall()
        layers = self._conn.execute(
            "SELECT layer FROM structure_layers WHERE structure=? ORDER BY position",
            (row[0],),
        ).fetchall()
        return ParadigmStructure(
            row[0], row[1], row[2],
            tuple(Slot(_fs(s[0]), s[1], s[2]) for s in slots),
            tuple(l[0] for l in layers),
        )

    def get_structure(self, structure_id) -> Optional[ParadigmStructure]:
        row = self._conn.execute(
            "SELECT id, inflection_class, name FROM structures WHERE id=?",
            (structure_id,),
        ).fetchone()
        return self._structure_from_row(row) if row else None

    def list_structures(self, variety) -> list[ParadigmStructure]:
        rows = self._conn.execute(
            "SELECT id, inflection_class, name FROM structures WHERE variety=? ORDER BY id",
            (variety,),
        ).fetchall()
        return [self._structure_from_row(r) for r in rows]

    def delete_structure(self, structure_id: int):
        with self._lock, self._conn:
            if not self._conn.execute(
                "DELETE FROM structures WHERE id=?", (structure_id,)
            ).rowcount:
                raise NotFound(f"no structure {structure_id}")

    # lemmas

    def add_lemma(self, variety, citation_form, gloss, inflection_class,
                  stems: dict[int, str], priority=0) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO lemmas (variety, citation_form, gloss, inflection_class, priority) "
                "VALUES (?,?,?,?,?)",
                (variety, citation_form, gloss, inflection_class, priority),
            )
            lemma_id = cur.lastrowid
            for idx, text in sorted(stems.items()):
                self._conn.execute(
                    "INSERT INTO stems (lemma, idx, text) VALUES (?,?,?)",
                    (lemma_id, idx, text),
                )
            return lemma_id

    def upsert_lemma(self, variety, citation_form, gloss, inflection_class,
                     stems: dict[int, str], priority=0) -> int:
        existing = self.lemma_by_citation(variety, citation_form)
        if existing is None:
            return self.add_lemma(variety, citation_form, gloss, inflection_class, stems, priority)
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE lemmas SET gloss=?, inflection_class=?, priority=? WHERE id=?",
                (gloss, inflection_class, priority, existing.id),
            )
            self._conn.execute("DELETE FROM stems WHERE lemma=?", (existing.id,))
            for idx, text in sorted(stems.items()):
                self._conn.execute(
                    "INSERT INTO stems (lemma, idx, text) VALUES (?,?,?)",
                    (existing.id, idx, text),
                )
            return existing.id

    def _lemma_from_row(self, row) -> Lemma:
        stems = dict(
            self._conn.execute(
                "SELECT idx, text FROM stems WHERE lemma=? ORDER BY idx", (row[0],)
            ).fetchall()
        )
        return Lemma(row[0], row[1], row[2], row[3], row[4], stems, row[5])

    _LEMMA_COLS = "id, variety, citation_form, gloss, inflection_class, priority"

    def get_lemma(self, lemma_id) -> Optional[Lemma]:
        row = self._conn.execute(
            f"SELECT {self._LEMMA_COLS} FROM lemmas WHERE id=?", (lemma_id,)
        ).fetchone()
        return self._lemma_from_row(row) if row else None

    def list_lemmas(self, variety) -> list[Lemma]:
        rows = self._conn.execute(
            f"SELECT {self._LEMMA_COLS} FROM lemmas WHERE variety=? ORDER BY id",
            (variety,),
        ).fetchall()
        return [self._lemma_from_row(r) for r in rows]

    def lemma_by_citation(self, variety, citation_form) -> Optional[Lemma]:
        row = self._conn.execute(
            f"SELECT {self._LEMMA_COLS} FROM lemmas WHERE variety=? AND citation_form=?",
            (variety, citation_form),
        ).fetchone()
        return self._lemma_from_row(row) if row else None

    def delete_lemma(self, lemma_id):
        with self._lock, self._conn:
            n = self._conn.execute(
                "SELECT COUNT(*) FROM entries WHERE lemma=?", (lemma_id,)
            ).fetchone()[0]
            if n:
                raise DependentEntriesExist(
                    f"lemma {lemma_id} still has {n} wordform entries"
                )
            if not self._conn.execute(
                "DELETE FROM lemmas WHERE id=?", (lemma_id,)
            ).rowcount:
                raise NotFound(f"no lemma {lemma_id}")

    # rewrite rules

    def add_rule(self, variety, pattern, replacement, order, scope=None) -> int:
        from .patterns import compile_rule  # validate at save time

        compile_rule(MorphophonRule(0, variety, pattern, replacement, order, scope))
        with self._lock, self._conn:
            clash = self._conn.execute(
                "SELECT COUNT(*) FROM rules WHERE variety=? AND scope IS ? AND ord=?",
                (variety, scope, order),
            ).fetchone()[0]
            if clash:
                raise ValueError(f"rule order {order} already used in this scope")
            cur = self._conn.execute(
                "INSERT INTO rules (variety, pattern, replacement, ord, scope) VALUES (?,?,?,?,?)",
                (variety, pattern, replacement, order, scope),
            )
            return cur.lastrowid

    def delete_rule(self, rule_id: int):
        with self._lock, self._conn:
            if not self._conn.execute(
                "DELETE FROM rules WHERE id=?", (rule_id,)
            ).rowcount:
                raise NotFound(f"no rule {rule_id}")

    def list_rules(self, variety) -> list[MorphophonRule]:
        rows = self._conn.execute(
            "SELECT id, variety, pattern, replacement, ord, scope FROM rules "
            "WHERE variety=? ORDER BY scope IS NOT NULL, ord, id",
            (variety,),
        ).fetchall()
        return [MorphophonRule(*r) for r in rows]

    # question templates

    def add_question_template(self, variety, features: FeatureSet, text, draft=False) -> int:
        QuestionTemplate(0, variety, features, text, draft)  # validate
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO question_templates (variety, features, text, draft) VALUES (?,?,?,?)",
                (variety, features.canonical(), text, int(draft)),
            )
            self._register_features(features)
            return cur.lastrowid

    def list_question_templates(self, variety) -> list[QuestionTemplate]:
        rows = self._conn.execute(
            "SELECT id, variety, features, text, draft FROM question_templates "
            "WHERE variety=? ORDER BY id",
            (variety,),
        ).fetchall()
        return [QuestionTemplate(r[0], r[1], _fs(r[2]), r[3], bool(r[4])) for r in rows]

    def question_for_features(self, variety, features: FeatureSet) -> Optional[QuestionTemplate]:
        row = self._conn.execute(
            "SELECT id, variety, features, text, draft FROM question_templates "
            "WHERE variety=? AND features=? AND draft=0 ORDER BY id LIMIT 1",
            (variety, features.canonical()),
        ).fetchone()
        return QuestionTemplate(row[0], row[1], _fs(row[2]), row[3], bool(row[4])) if row else None

    # wordform entries

    def add_entries(self, lemma_id: int, cells: Sequence[ExpandedCell]) -> int:
        """Insert expansion results; existing (lemma, features) cells are kept."""
        created = 0
        with self._lock, self._conn:
            for cell in cells:
                cur = self._conn.execute(
                    "INSERT OR IGNORE INTO entries (lemma, features, form, status, source, priority) "
                    "VALUES (?,?,?,?,?,?)",
                    (
                        lemma_id,
                        cell.features.canonical(),
                        cell.form,
                        cell.status.value,
                        cell.source.value,
                        cell.priority,
                    ),
                )
                created += cur.rowcount
                self._register_features(cell.features)
        return created

    _ENTRY_COLS = "id, lemma, features, form, status, source, version, escalated, priority"

    def _entry_from_row(self, row) -> WordformEntry:
        votes = self._conn.execute(
            "SELECT user, form FROM votes WHERE entry=? ORDER BY position", (row[0],)
        ).fetchall()
        history = self._conn.execute(
            "SELECT form, status, user, timestamp FROM history WHERE entry=? ORDER BY position",
            (row[0],),
        ).fetchall()
        return WordformEntry(
            id=row[0],
            lemma=row[1],
            features=_fs(row[2]),
            form=row[3],
            status=Status(row[4]),
            source=Source(row[5]),
            version=row[6],
            escalated=bool(row[7]),
            priority=row[8],
            votes=tuple(Vote(v[0], v[1]) for v in votes),
            history=tuple(HistoryRecord(h[0], Status(h[1]), h[2], h[3]) for h in history),
        )

    def get_entry(self, entry_id: int) -> Optional[WordformEntry]:
        row = self._conn.execute(
            f"SELECT {self._ENTRY_COLS} FROM entries WHERE id=?", (entry_id,)
        ).fetchone()
        return self._entry_from_row(row) if row else None

    def save_entry_cas(self, entry: WordformEntry, expected_version: int) -> WordformEntry:
        """Write iff the stored version equals expected_version; appends the
        new history rows and replaces votes atomically."""
        if entry.version != expected_version + 1:
            raise ValueError("entry must carry version expected_version + 1")
        with self._lock, self._conn:
            verified_at = time.time() if entry.status is Status.VERIFIED else None
            cur = self._conn.execute(
                "UPDATE entries SET form=?, status=?, source=?, version=?, escalated=?, "
                "priority=?, verified_at=COALESCE(?, verified_at) "
                "WHERE id=? AND version=?",
                (
                    entry.form,
                    entry.status.value,
                    entry.source.value,
                    entry.version,
                    int(entry.escalated),
                    entry.priority,
                    verified_at,
                    entry.id,
                    expected_version,
                ),
            )
            if cur.rowcount == 0:
                exists = self._conn.execute(
                    "SELECT version FROM entries WHERE id=?", (entry.id,)
                ).fetchone()
                if exists is None:
                    raise NotFound(f"no entry {entry.id}")
                raise StaleVersion(
                    f"entry {entry.id}: stored version {exists[0]}, expected {expected_version}"
                )
            self._conn.execute("DELETE FROM votes WHERE entry=?", (entry.id,))
            self._conn.executemany(
                "INSERT INTO votes (entry, user, form, position) VALUES (?,?,?,?)",
                [(entry.id, v.user, v.form, i) for i, v in enumerate(entry.votes)],
            )
            stored = self._conn.execute(
                "SELECT COUNT(*) FROM history WHERE entry=?", (entry.id,)
            ).fetchone()[0]
            self._conn.executemany(
                "INSERT INTO history (entry, position, form, status, user, timestamp) "
                "VALUES (?,?,?,?,?,?)",
                [
                    (entry.id, i, h.form, h.status.value, h.user, h.timestamp)
                    for i, h in enumerate(entry.history)
                    if i >= stored
                ],
            )
        return self.get_entry(entry.id)

    def query_cells(
        self,
        variety: int,
        status: Optional[Status] = None,
        features: Optional[FeatureSet] = None,
        lemma: Optional[int] = None,
        page_size: int = 100,
        offset: int = 0,
    ) -> list[WordformEntry]:
        if page_size > MAX_PAGE_SIZE:
            raise PageTooLarge(f"page size {page_size} exceeds {MAX_PAGE_SIZE}")
        sql = (
            f"SELECT {', '.join('e.' + c for c in self._ENTRY_COLS.split(', '))} "
            "FROM entries e JOIN lemmas l ON e.lemma = l.id WHERE l.variety=?"
        )
        args: list = [variety]
        if status is not None:
            sql += " AND e.status=?"
            args.append(status.value)
        if features is not None:
            sql += " AND e.features=?"
            args.append(features.canonical())
        if lemma is not None:
            sql += " AND e.lemma=?"
            args.append(lemma)
        sql += " ORDER BY e.id LIMIT ? OFFSET ?"
        args += [page_size, offset]
        return [self._entry_from_row(r) for r in self._conn.execute(sql, args).fetchall()]

    def verified_count(self, variety: int) -> int:
        return self._conn.execute(
            "SELECT COUNT(*) FROM entries e JOIN lemmas l ON e.lemma = l.id "
            "WHERE l.variety=? AND e.status=?",
            (variety, Status.VERIFIED.value),
        ).fetchone()[0]

    def recent_verified_exemplars(
        self, features: FeatureSet, exclude_lemma: int, limit: int
    ) -> list[FewShotExemplar]:
        rows = self._conn.execute(
            "SELECT e.lemma, l.citation_form, e.form FROM entries e "
            "JOIN lemmas l ON e.lemma = l.id "
            "WHERE e.status=? AND e.features=? AND e.lemma<>? "
            "ORDER BY e.verified_at DESC, e.id DESC LIMIT ?",
            (Status.VERIFIED.value, features.canonical(), exclude_lemma, limit),
        ).fetchall()
        out = []
        for lemma_id, citation, form in rows:
            stems = dict(
                self._conn.execute(
                    "SELECT idx, text FROM stems WHERE lemma=? ORDER BY idx", (lemma_id,)
                ).fetchall()
            )
            out.append(FewShotExemplar(citation, stems, form, features))
        return out

    # training bookkeeping

    def training_state(self, variety: int) -> tuple[int, bool]:
        row = self._conn.execute(
            "SELECT last_trained_verified, running FROM training_state WHERE variety=?",
            (variety,),
        ).fetchone()
        return (row[0], bool(row[1])) if row else (0, False)

    def try_begin_training(self, variety: int) -> bool:
        """Atomically claim the per-variety training slot."""
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR IGNORE INTO training_state (variety) VALUES (?)", (variety,)
            )
            cur = self._conn.execute(
                "UPDATE training_state SET running=1 WHERE variety=? AND running=0",
                (variety,),
            )
            return cur.rowcount == 1

    def finish_training(self, variety: int, verified_count: int, model_path: Optional[str]):
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE training_state SET running=0, last_trained_verified=?, "
                "model_path=COALESCE(?, model_path) WHERE variety=?",
                (verified_count, model_path, variety),
            )
