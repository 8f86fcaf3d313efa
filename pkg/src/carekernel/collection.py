"""Collection: named data streams, batch ingestion, queries, daily summaries.

Ingestion is idempotent: a point's identity is (stream, participant,
timestamp, hash of values), enforced by a storage unique index, so device
re-sends and connector replays are harmless. Every newly stored point is
offered to the rule engine's data-trigger bus exactly once per unique point;
the point carries a dispatched marker so a crash between store and dispatch
is replayed on restart and absorbed by the engine's dedup.

Time intervals are half-open [from, to) everywhere.
"""

from __future__ import annotations

import json
import logging
from datetime import datetime, timedelta, timezone
from typing import Any

from .connectors import AdapterAuthRevoked, SimulatedAdapter, VENDOR_REGISTRY
from .errors import (
    BadRequest,
    ConnectorRevoked,
    InvalidRange,
    InvalidSchema,
    NotFound,
    StreamExists,
    StudyClosed,
)
from .storage import Storage
from .util import content_hash, iso, load_zone, parse_duration, parse_ts

logger = logging.getLogger(__name__)

SCALAR_TYPES = {"number", "text", "boolean"}
AGG_FNS = {"mean", "min", "max", "count", "sum", "last"}
CLOCK_SKEW_ALLOWANCE = timedelta(minutes=5)

# Injected trigger-payload fields; a declared value field of the same name
# shadows the injected one.
INJECTED_POINT_FIELDS = ("stream", "participant", "timestamp", "date")


def _check_scalar(expected: str, value: Any) -> bool:
    if expected == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected == "text":
        return isinstance(value, str)
    if expected == "boolean":
        return isinstance(value, bool)
    return False


class CollectionService:
    def __init__(self, storage: Storage, clock):
        self.storage = storage
        self.clock = clock
        self.engine = None  # wired by the kernel; receives accepted points
        self.timezone_of = lambda participant_id: timezone.utc  # wired

    # -- streams ---------------------------------------------------------

    def register_stream(self, study_id: str, stream_name: str,
                        value_schema: dict[str, str], sensitive: bool = False,
                        retention: str | None = None, inferred: bool = False) -> dict:
        if not stream_name or "/" in stream_name:
            raise InvalidSchema("stream name must be a plain identifier")
        if not isinstance(value_schema, dict) or not value_schema:
            raise InvalidSchema("value schema must declare at least one field")
        for field, ftype in value_schema.items():
            if ftype not in SCALAR_TYPES:
                raise InvalidSchema(
                    f"field {field!r}: type must be one of {sorted(SCALAR_TYPES)}"
                )
        with self.storage.tx():
            if self.storage.query_one(
                "SELECT 1 FROM streams WHERE study_id = ? AND stream_name = ?",
                (study_id, stream_name),
            ):
                raise StreamExists(f"stream {stream_name!r} exists in study {study_id}")
            self.storage.execute(
                "INSERT INTO streams (study_id, stream_name, schema_json, sensitive, "
                "retention, inferred) VALUES (?, ?, ?, ?, ?, ?)",
                (study_id, stream_name, json.dumps(value_schema),
                 1 if sensitive else 0, retention, 1 if inferred else 0),
            )
        return self.get_stream(study_id, stream_name)

    def get_stream(self, study_id: str, stream_name: str) -> dict:
        row = self.storage.query_one(
            "SELECT stream_name, schema_json, sensitive, retention, inferred "
            "FROM streams WHERE study_id = ? AND stream_name = ?",
            (study_id, stream_name),
        )
        if row is None:
            raise NotFound(f"stream {stream_name!r} in study {study_id}")
        return {
            "study_id": study_id,
            "stream_name": row["stream_name"],
            "value_schema": json.loads(row["schema_json"]),
            "sensitive": bool(row["sensitive"]),
            "retention": row["retention"],
        }

    def list_streams(self, study_id: str) -> list[dict]:
        rows = self.storage.query(
            "SELECT stream_name FROM streams WHERE study_id = ? ORDER BY stream_name",
            (study_id,),
        )
        return [self.get_stream(study_id, r["stream_name"]) for r in rows]

    # -- ingestion -----------------------------------------------------------

    def ingest_batch(self, study_id: str, participant_id: str, points: list[dict],
                     source: str = "direct_device", author: str | None = None,
                     dispatch: bool = True) -> dict:
        """Store a batch for one participant; partial acceptance, never
        all-or-nothing. Returns {"accepted": n, "rejected": [[index, reason]]}.
        """
        study = self.storage.query_one(
            "SELECT status FROM studies WHERE study_id = ?", (study_id,)
        )
        if study is None:
            raise NotFound(f"study {study_id}")
        if study["status"] == "closed":
            raise StudyClosed(f"study {study_id} is closed")
        prow = self.storage.query_one(
            "SELECT sensitive_optout FROM participants WHERE participant_id = ? AND study_id = ?",
            (participant_id, study_id),
        )
        if prow is None:
            raise NotFound(f"participant {participant_id} in study {study_id}")
        optout = bool(prow["sensitive_optout"])

        now = self.clock.now()
        schemas: dict[str, dict | None] = {}
        sensitive: dict[str, bool] = {}

        def stream_schema(name: str):
            if name not in schemas:
                row = self.storage.query_one(
                    "SELECT schema_json, sensitive FROM streams "
                    "WHERE study_id = ? AND stream_name = ?",
                    (study_id, name),
                )
                schemas[name] = json.loads(row["schema_json"]) if row else None
                sensitive[name] = bool(row["sensitive"]) if row else False
            return schemas[name]

        rejected: list[tuple[int, str]] = []
        to_insert = []   # (index, row tuple)
        seen_keys = set()
        for index, doc in enumerate(points):
            if not isinstance(doc, dict):
                rejected.append((index, "malformed"))
                continue
            name = doc.get("stream")
            schema = stream_schema(name) if isinstance(name, str) else None
            if schema is None:
                rejected.append((index, "unknown-stream"))
                continue
            if sensitive[name] and optout:
                rejected.append((index, "sensitive-opt-out"))
                continue
            try:
                ts = parse_ts(doc.get("timestamp"))
            except (ValueError, TypeError):
                rejected.append((index, "bad-timestamp"))
                continue
            if ts > now + CLOCK_SKEW_ALLOWANCE:
                rejected.append((index, "future-timestamp"))
                continue
            values = doc.get("values")
            reason = self._check_values(schema, values)
            if reason is not None:
                rejected.append((index, reason))
                continue
            vhash = content_hash(values)
            key = (name, iso(ts), vhash)
            if key in seen_keys:
                rejected.append((index, "duplicate"))
                continue
            seen_keys.add(key)
            to_insert.append(
                (index, (study_id, name, participant_id, iso(ts), iso(now),
                         json.dumps(values), vhash, source, author))
            )

        accepted_rowids: list[int] = []
        with self.storage.tx():
            for index, row in to_insert:
                cur = self.storage.execute(
                    "INSERT OR IGNORE INTO points (study_id, stream_name, participant, "
                    "ts, ingested_at, values_json, values_hash, source, author, dispatched) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, 0)",
                    row,
                )
                if cur.rowcount == 0:
                    rejected.append((index, "duplicate"))
                else:
                    accepted_rowids.append(cur.lastrowid)

        if dispatch and accepted_rowids:
            self.dispatch_points(accepted_rowids)

        rejected.sort(key=lambda r: r[0])
        return {"accepted": len(accepted_rowids),
                "rejected": [[i, reason] for i, reason in rejected]}

    def _check_values(self, schema: dict, values: Any) -> str | None:
        if not isinstance(values, dict):
            return "schema-mismatch"
        for field, value in values.items():
            if field not in schema:
                return "schema-mismatch"
            if value is None:
                continue  # absent-equivalent; aggregates skip it
            if not _check_scalar(schema[field], value):
                return "schema-mismatch"
        return None

    # -- trigger bus -------------------------------------------------------

    def dispatch_points(self, rowids: list[int]) -> None:
        """Offer stored points to the rule engine, then mark them dispatched.

        Points on streams with no subscribed rules are marked in bulk; real
        deliveries are marked one by one, after evaluation, so a crash can
        only cause a replay (absorbed by the engine's dedup), never a loss.
        """
        if not rowids:
            return
        if self.engine is None:
            with self.storage.tx():
                self.storage.executemany(
                    "UPDATE points SET dispatched = 1 WHERE id = ?",
                    [(r,) for r in rowids],
                )
            return
        subscribed: dict[tuple, bool] = {}
        fast: list[int] = []
        slow: list[int] = []
        for chunk_start in range(0, len(rowids), 500):
            chunk = rowids[chunk_start:chunk_start + 500]
            marks = ",".join("?" for _ in chunk)
            for row in self.storage.query(
                f"SELECT id, study_id, stream_name FROM points WHERE id IN ({marks})",
                chunk,
            ):
                key = (row["study_id"], row["stream_name"])
                if key not in subscribed:
                    subscribed[key] = self.engine.has_data_rules(*key)
                (slow if subscribed[key] else fast).append(row["id"])
        slow.sort()
        if fast:
            with self.storage.tx():
                self.storage.executemany(
                    "UPDATE points SET dispatched = 1 WHERE id = ?",
                    [(r,) for r in fast],
                )
        for rowid in slow:
            row = self.storage.query_one("SELECT * FROM points WHERE id = ?", (rowid,))
            if row is None:
                continue
            try:
                self.engine.on_data(self.point_payload(row))
            except Exception:
                logger.exception("data-trigger dispatch failed for point %s", rowid)
            with self.storage.tx():
                self.storage.execute(
                    "UPDATE points SET dispatched = 1 WHERE id = ?", (rowid,)
                )

    def replay_undispatched(self) -> int:
        """Startup recovery: re-offer points stored but never dispatched."""
        rows = self.storage.query(
            "SELECT id FROM points WHERE dispatched = 0 ORDER BY id"
        )
        rowids = [r["id"] for r in rows]
        if rowids:
            logger.info("replaying %d undispatched points", len(rowids))
            self.dispatch_points(rowids)
        return len(rowids)

    def point_payload(self, row) -> dict:
        """Engine-facing view of a stored point: values plus injected fields."""
        values = json.loads(row["values_json"])
        ts = parse_ts(row["ts"])
        tz = self.timezone_of(row["participant"])
        payload = {
            "study_id": row["study_id"],
            "stream": row["stream_name"],
            "participant": row["participant"],
            "timestamp": row["ts"],
            "ingested_at": row["ingested_at"],
            "date": ts.astimezone(tz).date().isoformat(),
            "values": values,
            "values_hash": row["values_hash"],
            "source": row["source"],
        }
        return payload

    # -- queries ------------------------------------------------------------

    def query_stream(self, study_id: str, stream_name: str,
                     participant: str | None = None,
                     ts_from: str | datetime | None = None,
                     ts_to: str | datetime | None = None,
                     agg: dict | None = None) -> list[dict]:
        self.get_stream(study_id, stream_name)  # 404 on unknown stream
        t_from = _as_ts(ts_from)
        t_to = _as_ts(ts_to)
        if t_from is not None and t_to is not None and t_from > t_to:
            raise InvalidRange("from must be <= to")
        sql = ("SELECT participant, ts, values_json, source FROM points "
               "WHERE study_id = ? AND stream_name = ?")
        params: list = [study_id, stream_name]
        if participant is not None:
            sql += " AND participant = ?"
            params.append(participant)
        if t_from is not None:
            sql += " AND ts >= ?"
            params.append(iso(t_from))
        if t_to is not None:
            sql += " AND ts < ?"
            params.append(iso(t_to))
        sql += " ORDER BY ts, participant"
        rows = self.storage.query(sql, params)
        if agg is None:
            return [
                {
                    "participant": r["participant"],
                    "timestamp": r["ts"],
                    "values": json.loads(r["values_json"]),
                    "source": r["source"],
                }
                for r in rows
            ]
        return self._aggregate(study_id, stream_name, rows, agg)

    def _aggregate(self, study_id: str, stream_name: str, rows, agg: dict) -> list[dict]:
        fn = agg.get("fn")
        if fn not in AGG_FNS:
            raise BadRequest(f"agg fn must be one of {sorted(AGG_FNS)}")
        try:
            bin_width = parse_duration(agg.get("bin"))
        except ValueError as exc:
            raise BadRequest(str(exc))
        field = agg.get("field")
        if fn != "count" and field is None:
            schema = self.get_stream(study_id, stream_name)["value_schema"]
            numeric = [f for f, t in schema.items() if t == "number"]
            if len(numeric) != 1:
                raise BadRequest(
                    "agg field is required when the stream has more than one numeric field"
                )
            field = numeric[0]

        width = bin_width.total_seconds()
        bins: dict[int, list] = {}
        for r in rows:
            ts = parse_ts(r["ts"])
            bin_index = int(ts.timestamp() // width)
            values = json.loads(r["values_json"])
            if fn == "count":
                bins.setdefault(bin_index, []).append(1)
            else:
                v = values.get(field)
                if v is None or isinstance(v, bool) or not isinstance(v, (int, float)):
                    continue
                bins.setdefault(bin_index, []).append(v)

        out = []
        for bin_index in sorted(bins):
            vals = bins[bin_index]
            if fn == "count":
                value: Any = len(vals)
            elif fn == "mean":
                value = sum(vals) / len(vals)
            elif fn == "sum":
                value = sum(vals)
            elif fn == "min":
                value = min(vals)
            elif fn == "max":
                value = max(vals)
            else:  # last: vals are in ts order already
                value = vals[-1]
            start = datetime.fromtimestamp(bin_index * width, tz=timezone.utc)
            out.append({"bin": iso(start), "value": value})
        return out

    # -- connectors -----------------------------------------------------------

    def link_connector(self, study_id: str, participant_id: str, vendor: str,
                       connector_id: str | None = None) -> dict:
        if vendor not in VENDOR_REGISTRY:
            raise NotFound(f"unknown vendor {vendor!r}")
        cid = connector_id or f"cx-{vendor}-{participant_id}"
        with self.storage.tx():
            self.storage.execute(
                "INSERT OR REPLACE INTO connectors (connector_id, study_id, vendor, "
                "participant, auth_state, cursor) VALUES (?, ?, ?, ?, 'linked', '0')",
                (cid, study_id, vendor, participant_id),
            )
        return self.get_connector(cid)

    def get_connector(self, connector_id: str) -> dict:
        row = self.storage.query_one(
            "SELECT * FROM connectors WHERE connector_id = ?", (connector_id,)
        )
        if row is None:
            raise NotFound(f"connector {connector_id}")
        return dict(row)

    def sync_connector(self, connector_id: str) -> dict:
        """Pull new upstream rows through the vendor adapter and ingest them."""
        conn = self.get_connector(connector_id)
        if conn["auth_state"] != "linked":
            raise ConnectorRevoked(f"connector {connector_id} is {conn['auth_state']}")
        adapter = SimulatedAdapter(self.storage, conn["vendor"])
        try:
            rows, new_cursor = adapter.fetch(connector_id, conn["cursor"])
        except AdapterAuthRevoked:
            with self.storage.tx():
                self.storage.execute(
                    "UPDATE connectors SET auth_state = 'revoked' WHERE connector_id = ?",
                    (connector_id,),
                )
            raise ConnectorRevoked(f"connector {connector_id} authorization revoked")
        result = {"accepted": 0, "rejected": []}
        if rows:
            result = self.ingest_batch(
                conn["study_id"], conn["participant"], rows, source="connector"
            )
        with self.storage.tx():
            self.storage.execute(
                "UPDATE connectors SET cursor = ? WHERE connector_id = ?",
                (new_cursor, connector_id),
            )
        return {"new_points": result["accepted"], "cursor": new_cursor,
                "rejected": result["rejected"]}

    # -- daily summary ----------------------------------------------------------

    def daily_summary(self, participant_id: str, date_text: str) -> dict:
        """Per-stream count, hourly-bin coverage, and last-seen for one civil day."""
        prow = self.storage.query_one(
            "SELECT study_id FROM participants WHERE participant_id = ?",
            (participant_id,),
        )
        if prow is None:
            raise NotFound(f"participant {participant_id}")
        study_id = prow["study_id"]
        tz = self.timezone_of(participant_id)
        try:
            day = datetime.strptime(date_text, "%Y-%m-%d").date()
        except ValueError:
            raise BadRequest(f"bad date {date_text!r}")
        today_local = self.clock.now().astimezone(tz).date()
        if day > today_local:
            raise BadRequest("date is in the future")

        start = datetime(day.year, day.month, day.day, tzinfo=tz).astimezone(timezone.utc)
        end = (datetime(day.year, day.month, day.day, tzinfo=tz) + timedelta(days=1)).astimezone(timezone.utc)
        per_stream: dict[str, dict] = {}
        for stream in self.list_streams(study_id):
            name = stream["stream_name"]
            rows = self.storage.query(
                "SELECT ts FROM points WHERE study_id = ? AND stream_name = ? "
                "AND participant = ? AND ts >= ? AND ts < ? ORDER BY ts",
                (study_id, name, participant_id, iso(start), iso(end)),
            )
            hours = set()
            last_seen = None
            for r in rows:
                local = parse_ts(r["ts"]).astimezone(tz)
                hours.add(local.hour)
                last_seen = r["ts"]
            per_stream[name] = {
                "count": len(rows),
                "coverage": len(hours) / 24.0,
                "last_seen": last_seen,
            }
        return {"participant": participant_id, "date": date_text,
                "per_stream": per_stream}

    def stream_point_count(self, study_id: str, stream_name: str) -> int:
        row = self.storage.query_one(
            "SELECT COUNT(*) AS n FROM points WHERE study_id = ? AND stream_name = ?",
            (study_id, stream_name),
        )
        return row["n"]


def _as_ts(value) -> datetime | None:
    if value is None:
        return None
    if isinstance(value, datetime):
        if value.tzinfo is None:
            raise InvalidRange("naive datetime")
        return value.astimezone(timezone.utc)
    try:
        return parse_ts(value)
    except ValueError:
        raise InvalidRange(f"bad timestamp {value!r}")
