"""Researcher-facing management operations.

Studies and groups, recruitment links, manual annotations (stored as
ordinary data streams with an annotation. prefix, so queries, summaries, and
rule triggers treat them like any other stream), and manual notifications
(outbox rows identical in shape to engine pushes, rule_id=manual).
"""

from __future__ import annotations

import json
import logging

from .collection import CollectionService
from .errors import BadRequest, NotFound, StudyClosed, TypeConflict
from .storage import Storage
from .util import iso, load_zone, new_secret, parse_ts, random_id

logger = logging.getLogger(__name__)


class DashboardService:
    def __init__(self, storage: Storage, clock, collection: CollectionService):
        self.storage = storage
        self.clock = clock
        self.collection = collection

    # -- studies -----------------------------------------------------------

    def create_study(self, name: str, groups: list[str], locale: str,
                     timezone_name: str, study_id: str | None = None) -> dict:
        if not name:
            raise BadRequest("study name is required")
        if not groups or len(set(groups)) != len(groups):
            raise BadRequest("group names must be non-empty and unique")
        if load_zone(timezone_name) is None:
            raise BadRequest(f"unknown timezone {timezone_name!r}")
        sid = study_id or f"st-{random_id(8)}"
        with self.storage.tx():
            if self.storage.query_one(
                "SELECT 1 FROM studies WHERE study_id = ?", (sid,)
            ):
                raise BadRequest(f"study id {sid} is taken")
            self.storage.execute(
                "INSERT INTO studies (study_id, name, locale, timezone, status, "
                "secret, created_at) VALUES (?, ?, ?, ?, 'draft', ?, ?)",
                (sid, name, locale, timezone_name, new_secret(), iso(self.clock.now())),
            )
            for group in groups:
                self.storage.execute(
                    "INSERT INTO study_groups (study_id, group_id) VALUES (?, ?)",
                    (sid, group),
                )
        return self.get_study(sid)

    def get_study(self, study_id: str) -> dict:
        row = self.storage.query_one(
            "SELECT study_id, name, locale, timezone, status FROM studies "
            "WHERE study_id = ?",
            (study_id,),
        )
        if row is None:
            raise NotFound(f"study {study_id}")
        groups = [g["group_id"] for g in self.storage.query(
            "SELECT group_id FROM study_groups WHERE study_id = ? ORDER BY group_id",
            (study_id,),
        )]
        return {**dict(row), "groups": groups}

    def list_studies(self, study_ids: list[str] | None = None) -> list[dict]:
        rows = self.storage.query("SELECT study_id FROM studies ORDER BY study_id")
        out = []
        for r in rows:
            if study_ids is not None and r["study_id"] not in study_ids:
                continue
            out.append(self.get_study(r["study_id"]))
        return out

    def set_status(self, study_id: str, status: str) -> dict:
        if status not in ("draft", "active", "closed"):
            raise BadRequest("status must be draft, active, or closed")
        with self.storage.tx():
            cur = self.storage.execute(
                "UPDATE studies SET status = ? WHERE study_id = ?", (status, study_id)
            )
            if cur.rowcount == 0:
                raise NotFound(f"study {study_id}")
        return self.get_study(study_id)

    def set_templates(self, study_id: str, templates: dict[str, str]) -> dict:
        if not isinstance(templates, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in templates.items()
        ):
            raise BadRequest("templates must map names to text bodies")
        with self.storage.tx():
            cur = self.storage.execute(
                "UPDATE studies SET templates_json = ? WHERE study_id = ?",
                (json.dumps(templates), study_id),
            )
            if cur.rowcount == 0:
                raise NotFound(f"study {study_id}")
        return {"study_id": study_id, "templates": templates}

    def list_participants(self, study_id: str) -> list[dict]:
        self.get_study(study_id)
        rows = self.storage.query(
            "SELECT participant_id, group_id, sensitive_optout, created_at "
            "FROM participants WHERE study_id = ? ORDER BY participant_id",
            (study_id,),
        )
        return [dict(r) for r in rows]

    # -- recruitment ----------------------------------------------------------

    def create_recruitment_link(self, study_id: str, group_id: str,
                                max_uses: int | None = None,
                                expires_at: str | None = None) -> dict:
        study = self.get_study(study_id)
        if study["status"] == "closed":
            raise StudyClosed(f"study {study_id} is closed")
        if group_id not in study["groups"]:
            raise NotFound(f"group {group_id} in study {study_id}")
        if max_uses is not None and (not isinstance(max_uses, int) or max_uses < 1):
            raise BadRequest("max_uses must be a positive integer")
        if expires_at is not None:
            parse_ts(expires_at)
        link_id = f"lk-{random_id(16)}"
        with self.storage.tx():
            self.storage.execute(
                "INSERT INTO recruitment_links (link_id, study_id, group_id, "
                "max_uses, uses, expires_at) VALUES (?, ?, ?, ?, 0, ?)",
                (link_id, study_id, group_id, max_uses, expires_at),
            )
        return {"link_id": link_id, "study_id": study_id, "group_id": group_id,
                "max_uses": max_uses, "expires_at": expires_at}

    # -- annotations --------------------------------------------------------------

    def annotate(self, author_id: str, study_id: str, participant_id: str,
                 stream_suffix: str, timestamp: str, values: dict) -> dict:
        """Store an annotation point on annotation.<suffix>.

        The stream is auto-created on first use with a schema inferred from
        the first point, then frozen: later type changes are type-conflict.
        """
        if not stream_suffix or "/" in stream_suffix:
            raise BadRequest("stream suffix must be a plain identifier")
        if not isinstance(values, dict) or not values:
            raise BadRequest("values are required")
        stream = f"annotation.{stream_suffix}"
        try:
            existing = self.collection.get_stream(study_id, stream)["value_schema"]
        except NotFound:
            inferred = {}
            for field, value in values.items():
                if isinstance(value, bool):
                    inferred[field] = "boolean"
                elif isinstance(value, (int, float)):
                    inferred[field] = "number"
                elif isinstance(value, str):
                    inferred[field] = "text"
                else:
                    raise BadRequest(f"field {field!r} must be a scalar")
            self.collection.register_stream(study_id, stream, inferred,
                                            sensitive=False, inferred=True)
            existing = inferred
        result = self.collection.ingest_batch(
            study_id, participant_id,
            [{"stream": stream, "timestamp": timestamp, "values": values}],
            source="annotation", author=author_id,
        )
        if result["rejected"]:
            reason = result["rejected"][0][1]
            if reason == "schema-mismatch":
                raise TypeConflict(
                    f"annotation does not match the established schema {existing}"
                )
            if reason == "duplicate":
                raise BadRequest("identical annotation already stored")
            raise BadRequest(f"annotation rejected: {reason}")
        return {"stream": stream, "participant": participant_id,
                "timestamp": timestamp, "values": values}

    # -- manual notifications ---------------------------------------------------------

    def send_manual_notification(self, study_id: str, participants: list[str],
                                 title: str, body: str) -> list[dict]:
        """Push to named participants; per-item outcomes, never all-or-nothing."""
        self.get_study(study_id)
        outcomes = []
        with self.storage.tx():
            for pid in participants:
                row = self.storage.query_one(
                    "SELECT 1 FROM participants WHERE participant_id = ? AND study_id = ?",
                    (pid, study_id),
                )
                if row is None:
                    outcomes.append({"participant": pid, "status": "failed",
                                     "error": "unknown-participant"})
                    continue
                self.storage.execute(
                    "INSERT INTO outbox (study_id, rule_id, participant, channel, kind, "
                    "recipient, title, body, created_at, status, attempts) "
                    "VALUES (?, 'manual', ?, 'push', 'internal', ?, ?, ?, ?, 'delivered', 1)",
                    (study_id, pid, f"participant:{pid}", title, body,
                     iso(self.clock.now())),
                )
                outcomes.append({"participant": pid, "status": "delivered"})
        return outcomes

    def list_outbox(self, study_id: str, channel: str | None = None,
                    rule_id: str | None = None) -> list[dict]:
        sql = "SELECT * FROM outbox WHERE study_id = ?"
        params: list = [study_id]
        if channel is not None:
            sql += " AND channel = ?"
            params.append(channel)
        if rule_id is not None:
            sql += " AND rule_id = ?"
            params.append(rule_id)
        rows = self.storage.query(sql + " ORDER BY id", params)
        return [dict(r) for r in rows]
