"""Embedded transactional storage.

Single-node SQLite (WAL mode) behind a thin handle. Everything above this
module talks to storage through Storage only: entity tables with unique
constraints, an append-only point store with range scans, a content-addressed
blob store, the outbox, and the rule-execution log.

Transactions are reentrant per thread: ``with storage.tx():`` opens
BEGIN IMMEDIATE at the outermost level and joins the open transaction when
nested, so a rule execution can bundle its effects (execution row, outbox
rows, profile writes) into one atomic commit.

Crash contract: a write acknowledged to a caller was committed. The window
between "point stored" and "trigger event processed" is covered by the
``dispatched`` marker on points; restart replays undispatched points and the
engine's trigger-instance dedup absorbs the duplicates.
"""

from __future__ import annotations

import json
import logging
import sqlite3
import threading
from pathlib import Path

from .errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Ordered migrations; each entry is (version, [statements]).
MIGRATIONS: list[tuple[int, list[str]]] = [
    (
        1,
        [
            """CREATE TABLE meta (
                key TEXT PRIMARY KEY,
                value TEXT NOT NULL
            )""",
            """CREATE TABLE principals (
                principal_id TEXT PRIMARY KEY,
                kind TEXT NOT NULL,
                credential_hash TEXT NOT NULL,
                salt TEXT NOT NULL,
                disabled INTEGER NOT NULL DEFAULT 0,
                created_at TEXT NOT NULL
            )""",
            """CREATE TABLE grants (
                principal_id TEXT NOT NULL,
                study_id TEXT NOT NULL,
                role TEXT NOT NULL,
                PRIMARY KEY (principal_id, study_id)
            )""",
            """CREATE TABLE vault (
                study_id TEXT NOT NULL,
                anonymous_id TEXT NOT NULL,
                email TEXT NOT NULL,
                PRIMARY KEY (study_id, anonymous_id),
                UNIQUE (study_id, email)
            )""",
            """CREATE TABLE tokens (
                token_hash TEXT PRIMARY KEY,
                principal_id TEXT NOT NULL,
                expires_at TEXT NOT NULL,
                scope_json TEXT NOT NULL
            )""",
            """CREATE TABLE studies (
                study_id TEXT PRIMARY KEY,
                name TEXT NOT NULL,
                locale TEXT NOT NULL,
                timezone TEXT NOT NULL,
                status TEXT NOT NULL,
                secret TEXT NOT NULL,
                templates_json TEXT NOT NULL DEFAULT '{}',
                created_at TEXT NOT NULL
            )""",
            """CREATE TABLE study_groups (
                study_id TEXT NOT NULL,
                group_id TEXT NOT NULL,
                PRIMARY KEY (study_id, group_id)
            )""",
            """CREATE TABLE participants (
                participant_id TEXT PRIMARY KEY,
                study_id TEXT NOT NULL,
                group_id TEXT NOT NULL,
                sensitive_optout INTEGER NOT NULL DEFAULT 0,
                created_at TEXT NOT NULL
            )""",
            """CREATE TABLE recruitment_links (
                link_id TEXT PRIMARY KEY,
                study_id TEXT NOT NULL,
                group_id TEXT NOT NULL,
                max_uses INTEGER,
                uses INTEGER NOT NULL DEFAULT 0,
                expires_at TEXT
            )""",
            """CREATE TABLE streams (
                study_id TEXT NOT NULL,
                stream_name TEXT NOT NULL,
                schema_json TEXT NOT NULL,
                sensitive INTEGER NOT NULL DEFAULT 0,
                retention TEXT,
                inferred INTEGER NOT NULL DEFAULT 0,
                PRIMARY KEY (study_id, stream_name)
            )""",
            """CREATE TABLE points (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                study_id TEXT NOT NULL,
                stream_name TEXT NOT NULL,
                participant TEXT NOT NULL,
                ts TEXT NOT NULL,
                ingested_at TEXT NOT NULL,
                values_json TEXT NOT NULL,
                values_hash TEXT NOT NULL,
                source TEXT NOT NULL,
                author TEXT,
                dispatched INTEGER NOT NULL DEFAULT 0
            )""",
            """CREATE UNIQUE INDEX ux_points_dedup
               ON points (study_id, stream_name, participant, ts, values_hash)""",
            """CREATE INDEX ix_points_scan
               ON points (study_id, stream_name, participant, ts)""",
            """CREATE INDEX ix_points_undispatched
               ON points (dispatched) WHERE dispatched = 0""",
            """CREATE TABLE connectors (
                connector_id TEXT PRIMARY KEY,
                study_id TEXT NOT NULL,
                vendor TEXT NOT NULL,
                participant TEXT NOT NULL,
                auth_state TEXT NOT NULL,
                cursor TEXT NOT NULL DEFAULT '0'
            )""",
            """CREATE TABLE connector_upstream (
                connector_id TEXT NOT NULL,
                seq INTEGER NOT NULL,
                row_json TEXT NOT NULL,
                PRIMARY KEY (connector_id, seq)
            )""",
            """CREATE TABLE profile_schemas (
                study_id TEXT NOT NULL,
                key_name TEXT NOT NULL,
                value_type TEXT NOT NULL,
                storage TEXT NOT NULL,
                visible INTEGER NOT NULL,
                writable_json TEXT NOT NULL,
                PRIMARY KEY (study_id, key_name)
            )""",
            """CREATE TABLE profile_values (
                scope TEXT NOT NULL,
                scope_id TEXT NOT NULL,
                study_id TEXT NOT NULL,
                key_name TEXT NOT NULL,
                value_json TEXT NOT NULL,
                version INTEGER NOT NULL,
                updated_at TEXT NOT NULL,
                updated_by TEXT NOT NULL,
                PRIMARY KEY (scope, scope_id, key_name, version)
            )""",
            """CREATE TABLE interactions (
                study_id TEXT NOT NULL,
                interaction_id TEXT NOT NULL,
                version INTEGER NOT NULL,
                doc_json TEXT NOT NULL,
                created_at TEXT NOT NULL,
                PRIMARY KEY (study_id, interaction_id, version)
            )""",
            """CREATE TABLE responses (
                response_id TEXT PRIMARY KEY,
                study_id TEXT NOT NULL,
                interaction_id TEXT NOT NULL,
                version INTEGER NOT NULL,
                participant TEXT NOT NULL,
                answers_json TEXT NOT NULL,
                meta_json TEXT NOT NULL,
                started_at TEXT,
                submitted_at TEXT NOT NULL
            )""",
            """CREATE TABLE rules (
                study_id TEXT NOT NULL,
                rule_id TEXT NOT NULL,
                doc_json TEXT NOT NULL,
                enabled INTEGER NOT NULL,
                PRIMARY KEY (study_id, rule_id)
            )""",
            """CREATE TABLE executions (
                execution_id TEXT PRIMARY KEY,
                study_id TEXT NOT NULL,
                rule_id TEXT NOT NULL,
                participant TEXT,
                trigger_instance TEXT NOT NULL,
                fired_at TEXT NOT NULL,
                bindings_json TEXT NOT NULL,
                actions_json TEXT NOT NULL,
                status TEXT NOT NULL,
                error TEXT
            )""",
            """CREATE UNIQUE INDEX ux_exec_completed
               ON executions (trigger_instance) WHERE status = 'completed'""",
            """CREATE INDEX ix_exec_rule ON executions (study_id, rule_id)""",
            """CREATE TABLE outbox (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                study_id TEXT NOT NULL,
                rule_id TEXT NOT NULL,
                participant TEXT,
                channel TEXT NOT NULL,
                kind TEXT NOT NULL,
                recipient TEXT NOT NULL,
                title TEXT,
                body TEXT,
                created_at TEXT NOT NULL,
                status TEXT NOT NULL,
                attempts INTEGER NOT NULL DEFAULT 1
            )""",
            """CREATE TABLE blobs (
                ref TEXT PRIMARY KEY,
                content BLOB NOT NULL,
                created_at TEXT NOT NULL
            )""",
            """CREATE TABLE scheduler_state (
                id INTEGER PRIMARY KEY CHECK (id = 1),
                last_tick TEXT
            )""",
        ],
    ),
]

# Tables included in dump/restore archives, in restore order.
DUMP_TABLES = [
    "meta",
    "principals",
    "grants",
    "vault",
    "tokens",
    "studies",
    "study_groups",
    "participants",
    "recruitment_links",
    "streams",
    "points",
    "connectors",
    "connector_upstream",
    "profile_schemas",
    "profile_values",
    "interactions",
    "responses",
    "rules",
    "executions",
    "outbox",
    "scheduler_state",
]


class Storage:
    """Handle over one SQLite database file (or shared in-memory db)."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._local = threading.local()
        self._memory_conn: sqlite3.Connection | None = None
        if self.path == ":memory:":
            # One shared connection, serialized by a lock: in-memory databases
            # are per-connection in SQLite, so threads must share.
            self._memory_conn = self._connect()
            self._memory_lock = threading.RLock()

    # -- connections ---------------------------------------------------

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(
            self.path,
            timeout=30.0,
            isolation_level=None,  # autocommit; transactions are explicit
            check_same_thread=False,
        )
        conn.row_factory = sqlite3.Row
        conn.execute("PRAGMA foreign_keys = ON")
        if self.path != ":memory:":
            conn.execute("PRAGMA journal_mode = WAL")
            # NORMAL is durable against process kill (committed pages live in
            # the OS cache); FULL would only add power-loss durability at a
            # large per-commit fsync cost.
            conn.execute("PRAGMA synchronous = NORMAL")
        return conn

    @property
    def conn(self) -> sqlite3.Connection:
        if self._memory_conn is not None:
            return self._memory_conn
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = self._connect()
            self._local.conn = conn
        return conn

    # -- transactions ----------------------------------------------------

    def tx(self) -> "_Tx":
        return _Tx(self)

    @property
    def _depth(self) -> int:
        return getattr(self._local, "depth", 0)

    @_depth.setter
    def _depth(self, value: int) -> None:
        self._local.depth = value

    # -- convenience -----------------------------------------------------

    def execute(self, sql: str, params=()) -> sqlite3.Cursor:
        return self.conn.execute(sql, params)

    def executemany(self, sql: str, rows) -> sqlite3.Cursor:
        return self.conn.executemany(sql, rows)

    def query(self, sql: str, params=()) -> list[sqlite3.Row]:
        return self.conn.execute(sql, params).fetchall()

    def query_one(self, sql: str, params=()) -> sqlite3.Row | None:
        return self.conn.execute(sql, params).fetchone()

    def close(self) -> None:
        if self._memory_conn is not None:
            self._memory_conn.close()
            self._memory_conn = None
            return
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None

    # -- schema ------------------------------------------------------------

    def schema_version(self) -> int:
        try:
            row = self.query_one("SELECT value FROM meta WHERE key = 'schema_version'")
        except sqlite3.OperationalError:
            return 0
        if row is None:
            return 0
        try:
            return int(row["value"])
        except (TypeError, ValueError):
            raise ConfigError("corrupt schema-version record; refusing to start")

    def migrate(self) -> int:
        """Apply pending migrations in order. Refuses to open a newer schema."""
        current = self.schema_version()
        if current > SCHEMA_VERSION:
            raise ConfigError(
                f"database schema version {current} is newer than supported "
                f"{SCHEMA_VERSION}; refusing to start"
            )
        with self.tx():
            for version, statements in MIGRATIONS:
                if version <= current:
                    continue
                for stmt in statements:
                    self.execute(stmt)
                self.execute(
                    "INSERT OR REPLACE INTO meta (key, value) VALUES ('schema_version', ?)",
                    (str(version),),
                )
                logger.info("applied storage migration %d", version)
        return self.schema_version()

    # -- dump/restore ------------------------------------------------------

    def dump(self) -> dict:
        archive = {"format": 1, "schema_version": self.schema_version(), "tables": {}}
        for table in DUMP_TABLES:
            rows = self.query(f"SELECT * FROM {table}")
            archive["tables"][table] = [dict(r) for r in rows]
        blobs = self.query("SELECT ref, content, created_at FROM blobs")
        archive["tables"]["blobs"] = [
            {"ref": r["ref"], "content_hex": r["content"].hex(), "created_at": r["created_at"]}
            for r in blobs
        ]
        return archive

    def restore(self, archive: dict) -> None:
        if archive.get("format") != 1:
            raise ConfigError("unsupported archive format")
        if int(archive.get("schema_version", -1)) != self.schema_version():
            raise ConfigError("archive schema version does not match database")
        with self.tx():
            for table in DUMP_TABLES + ["blobs"]:
                self.execute(f"DELETE FROM {table}")
            for table in DUMP_TABLES:
                for row in archive["tables"].get(table, []):
                    cols = list(row.keys())
                    self.execute(
                        f"INSERT INTO {table} ({','.join(cols)}) "
                        f"VALUES ({','.join('?' for _ in cols)})",
                        [row[c] for c in cols],
                    )
            for row in archive["tables"].get("blobs", []):
                self.execute(
                    "INSERT INTO blobs (ref, content, created_at) VALUES (?, ?, ?)",
                    (row["ref"], bytes.fromhex(row["content_hex"]), row["created_at"]),
                )


class _Tx:
    """Reentrant transaction scope. Outermost level commits or rolls back."""

    def __init__(self, storage: Storage):
        self.storage = storage

    def __enter__(self):
        st = self.storage
        if st._memory_conn is not None:
            st._memory_lock.acquire()
        if st._depth == 0:
            st.conn.execute("BEGIN IMMEDIATE")
        st._depth += 1
        return self

    def __exit__(self, exc_type, exc, tb):
        st = self.storage
        st._depth -= 1
        try:
            if st._depth == 0:
                if exc_type is None:
                    st.conn.execute("COMMIT")
                else:
                    st.conn.execute("ROLLBACK")
        finally:
            if st._memory_conn is not None:
                st._memory_lock.release()
        return False


def open_storage(path: str | Path) -> Storage:
    """Open (idempotently) and migrate a database at ``path``."""
    storage = Storage(path)
    storage.migrate()
    return storage


def dump_to_file(storage: Storage, out_path: str | Path) -> None:
    Path(out_path).write_text(json.dumps(storage.dump(), indent=1))


def restore_from_file(storage: Storage, in_path: str | Path) -> None:
    storage.restore(json.loads(Path(in_path).read_text()))
