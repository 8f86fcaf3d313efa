"""Rule engine: triggers, condition pipelines, actions.

A rule document holds one trigger (data-driven or cron), an ordered pipeline
of fetch / filter / branch steps, and a default action list. Evaluations are
logged as executions keyed by a trigger instance: the hash of (rule,
participant, trigger occurrence), with a storage-level uniqueness guarantee
of at most one completed execution per instance. Delivery of triggers is
at-least-once; the dedup makes effects exactly-once.

Internal effects of one evaluation (execution row, outbox rows, profile
writes) commit atomically. Webhook calls are external and therefore
at-least-once; receivers dedup on the X-Idempotency-Key header.

Evaluations for the same participant are serialized; distinct participants
may evaluate concurrently. Stream fetch windows end at fired_at (exclusive),
so an evaluation is reproducible from its log record.
"""

from __future__ import annotations

import hashlib
import hmac as hmaclib
import json
import logging
import sqlite3
import threading
import time
import urllib.error
import urllib.request
from datetime import datetime, timedelta, timezone

from . import expressions as ex
from .collection import CollectionService, INJECTED_POINT_FIELDS
from .cron import CronExpression, validate_cron
from .errors import BadRequest, KernelError, NotFound, ValidationFailed
from .profiles import ProfileService, _group_scope
from .storage import Storage
from .util import content_hash, iso, parse_duration, parse_ts

logger = logging.getLogger(__name__)

PUSH_CHANNELS = {"internal", "firebase-like", "onesignal-like"}
DEFAULT_WEBHOOK_BACKOFF = (1.0, 4.0, 16.0)
DEFAULT_CATCHUP_HORIZON_MINUTES = 60

RESEARCHER_ROLE_NAMES = {"admin", "study_manager", "recruiter", "data_analyst", "clinician"}


def _trigger_instance(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Data sources: where fetch steps read from
# ---------------------------------------------------------------------------


class LiveDataSource:
    def __init__(self, collection: CollectionService, profiles: ProfileService,
                 study_id: str, participant: str | None, group_id: str | None):
        self.collection = collection
        self.profiles = profiles
        self.study_id = study_id
        self.participant = participant
        self.group_id = group_id

    def _rows(self, raw) -> list[dict]:
        return [{**r["values"], "timestamp": r["timestamp"]} for r in raw]

    def stream_window(self, stream: str, start: datetime, end: datetime) -> list[dict]:
        try:
            raw = self.collection.query_stream(
                self.study_id, stream, participant=self.participant,
                ts_from=start, ts_to=end,
            )
        except NotFound:
            return []
        return self._rows(raw)

    def stream_last(self, stream: str, n: int, before: datetime) -> list[dict]:
        try:
            raw = self.collection.query_stream(
                self.study_id, stream, participant=self.participant, ts_to=before,
            )
        except NotFound:
            return []
        return self._rows(raw[-n:])

    def profile_rows(self, scope: str, key: str) -> list[dict]:
        if scope == "participant":
            if self.participant is None:
                return []
            value, version = self.profiles.current_value("participant", self.participant, key)
        else:
            if self.group_id is None:
                return []
            value, version = self.profiles.current_value(
                "group", _group_scope(self.study_id, self.group_id), key
            )
        if version == 0:
            return []
        return [{"value": value, "version": version}]

    def profile_view(self) -> dict:
        if self.participant is None:
            if self.group_id is None:
                return {}
            scope_id = _group_scope(self.study_id, self.group_id)
            view = {}
            for key in self.profiles.get_schema(self.study_id)["keys"]:
                value, _ = self.profiles.current_value("group", scope_id, key)
                view[key] = value
            return view
        return self.profiles.profile_view(self.study_id, self.participant)


class SyntheticDataSource:
    """Dry-run source: everything comes from the request, nothing is read
    from storage and nothing can leak side effects."""

    def __init__(self, doc: dict):
        self.streams = doc.get("streams", {})
        self.profile = doc.get("profile", {})
        self.group_profile = doc.get("group_profile", {})

    def stream_window(self, stream: str, start: datetime, end: datetime) -> list[dict]:
        rows = []
        for r in self.streams.get(stream, []):
            ts = parse_ts(r["timestamp"])
            if start <= ts < end:
                rows.append({**r.get("values", {}), "timestamp": iso(ts)})
        rows.sort(key=lambda r: r["timestamp"])
        return rows

    def stream_last(self, stream: str, n: int, before: datetime) -> list[dict]:
        rows = [
            {**r.get("values", {}), "timestamp": iso(parse_ts(r["timestamp"]))}
            for r in self.streams.get(stream, [])
            if parse_ts(r["timestamp"]) < before
        ]
        rows.sort(key=lambda r: r["timestamp"])
        return rows[-n:]

    def profile_rows(self, scope: str, key: str) -> list[dict]:
        source = self.profile if scope == "participant" else self.group_profile
        if key not in source or source[key] is None:
            return []
        return [{"value": source[key], "version": 1}]

    def profile_view(self) -> dict:
        return dict(self.profile)


# ---------------------------------------------------------------------------
# Static validation of rule documents
# ---------------------------------------------------------------------------


def validate_rule_doc(doc: dict, profiles: ProfileService,
                      collection: CollectionService, study_id: str) -> list[dict]:
    """Full static validation; returns [{path, message}] for every problem."""
    errors: list[dict] = []

    def err(path: str, message: str) -> None:
        errors.append({"path": path, "message": message})

    if not isinstance(doc, dict):
        return [{"path": "", "message": "rule document must be an object"}]
    if doc.get("format") != 1:
        err("format", "format must be 1")

    target = doc.get("target", "each_participant")
    if target not in ("each_participant", "group"):
        err("target", "target must be each_participant or group")

    trigger = doc.get("trigger")
    point_fields: set | None = None
    has_point = False
    if not isinstance(trigger, dict):
        err("trigger", "trigger is required")
        trigger = {}
    kind = trigger.get("kind")
    if kind == "data":
        has_point = True
        stream = trigger.get("stream")
        if not isinstance(stream, str) or not stream:
            err("trigger.stream", "data trigger requires a stream name")
        else:
            try:
                schema = collection.get_stream(study_id, stream)["value_schema"]
                point_fields = set(schema) | set(INJECTED_POINT_FIELDS)
            except NotFound:
                point_fields = None  # stream may be created later; allow any field
        if target == "group":
            err("target", "data triggers evaluate per participant")
    elif kind == "cron":
        problem = validate_cron(trigger.get("expr", ""))
        if problem:
            err("trigger.expr", problem)
        if trigger.get("timezone_mode", "study") not in ("study", "participant"):
            err("trigger.timezone_mode", "timezone_mode must be study or participant")
    else:
        err("trigger.kind", "trigger kind must be data or cron")

    schema_keys = set(profiles.get_schema(study_id)["keys"])
    dotted: dict[str, set | None] = {"profile": schema_keys or None}
    if has_point:
        dotted["point"] = point_fields

    bound: dict[str, set | None] = {}  # variable -> known row fields

    def expr_scope(bare_fields: set | None = None, allow_bare: bool = False) -> ex.StaticScope:
        return ex.StaticScope(
            dotted_fields=dict(dotted),
            variables=set(bound),
            bare_names=bare_fields,
            allow_bare=allow_bare,
        )

    def check_actions(specs, path: str) -> None:
        if not isinstance(specs, list):
            err(path, "actions must be a list")
            return
        for i, spec in enumerate(specs):
            apath = f"{path}[{i}]"
            if not isinstance(spec, dict):
                err(apath, "action must be an object")
                continue
            kind = spec.get("action")
            if kind == "send_email":
                to = spec.get("to")
                if to == "participant":
                    if target == "group":
                        err(f"{apath}.to", "group-target rules cannot email the participant")
                elif isinstance(to, dict) and to.get("role") in RESEARCHER_ROLE_NAMES:
                    pass
                else:
                    err(f"{apath}.to", "to must be 'participant' or {'role': <researcher role>}")
                if not spec.get("body") and not spec.get("template_id"):
                    err(apath, "send_email requires body or template_id")
                for field in ("subject", "body"):
                    if isinstance(spec.get(field), str):
                        for p in ex.validate_template(spec[field], expr_scope()):
                            err(f"{apath}.{field}", p)
            elif kind == "send_push":
                if spec.get("channel", "internal") not in PUSH_CHANNELS:
                    err(f"{apath}.channel", f"channel must be one of {sorted(PUSH_CHANNELS)}")
                if target == "group":
                    err(apath, "group-target rules cannot push to the participant")
                for field in ("title", "body"):
                    if not isinstance(spec.get(field), str):
                        err(f"{apath}.{field}", f"{field} is required")
                    else:
                        for p in ex.validate_template(spec[field], expr_scope()):
                            err(f"{apath}.{field}", p)
            elif kind == "write_profile":
                scope = spec.get("scope", "participant")
                if scope not in ("participant", "group"):
                    err(f"{apath}.scope", "scope must be participant or group")
                if scope == "participant" and target == "group":
                    err(f"{apath}.scope", "group-target rules cannot write participant profiles")
                key = spec.get("key")
                if not isinstance(key, str):
                    err(f"{apath}.key", "key is required")
                else:
                    try:
                        kspec = profiles._key_spec(study_id, key)
                        if kspec["storage"] == "edge":
                            err(f"{apath}.key", f"key {key!r} is edge-stored; rules cannot write it")
                        elif "service" not in kspec["writable_by"]:
                            err(f"{apath}.key", f"key {key!r} is not service-writable")
                    except NotFound:
                        err(f"{apath}.key", f"key {key!r} is not declared")
                if not isinstance(spec.get("value_expr"), str):
                    err(f"{apath}.value_expr", "value_expr is required")
                else:
                    for p in ex.validate(spec["value_expr"], expr_scope()):
                        err(f"{apath}.value_expr", p)
            elif kind == "webhook":
                if not isinstance(spec.get("url"), str) or not spec["url"].startswith(("http://", "https://")):
                    err(f"{apath}.url", "url must be http(s)")
                for p in _validate_payload_template(spec.get("payload"), expr_scope()):
                    err(f"{apath}.payload", p)
            else:
                err(apath, f"unknown action {kind!r}")

    pipeline = doc.get("pipeline", [])
    if not isinstance(pipeline, list):
        err("pipeline", "pipeline must be a list")
        pipeline = []
    for i, step in enumerate(pipeline):
        spath = f"pipeline[{i}]"
        if not isinstance(step, dict):
            err(spath, "step must be an object")
            continue
        skind = step.get("step")
        if skind == "fetch":
            into = step.get("into")
            if not isinstance(into, str) or not into:
                err(f"{spath}.into", "fetch requires a variable name")
            elif into in bound:
                err(f"{spath}.into", f"variable {into!r} is already bound")
            source = step.get("source")
            fields: set | None = None
            if not isinstance(source, dict):
                err(f"{spath}.source", "source is required")
            elif "stream" in source:
                if target == "group":
                    err(f"{spath}.source", "group-target rules cannot fetch participant streams")
                window = source.get("window")
                count = source.get("count")
                if window is None and count is None:
                    err(f"{spath}.source", "stream fetch requires window or count")
                if window is not None:
                    try:
                        parse_duration(window)
                    except ValueError as exc:
                        err(f"{spath}.source.window", str(exc))
                if count is not None and (not isinstance(count, int) or count < 1):
                    err(f"{spath}.source.count", "count must be an integer >= 1")
                try:
                    schema = collection.get_stream(study_id, source["stream"])["value_schema"]
                    fields = set(schema) | {"timestamp"}
                except (NotFound, TypeError):
                    fields = None
            elif "profile" in source:
                pspec = source.get("profile")
                if not isinstance(pspec, dict) or pspec.get("scope") not in ("participant", "group"):
                    err(f"{spath}.source.profile", "profile fetch requires scope and key")
                elif pspec.get("scope") == "participant" and target == "group":
                    err(f"{spath}.source.profile", "group-target rules cannot fetch participant profiles")
                key = pspec.get("key") if isinstance(pspec, dict) else None
                if not isinstance(key, str):
                    err(f"{spath}.source.profile.key", "key is required")
                else:
                    try:
                        profiles._key_spec(study_id, key)
                    except NotFound:
                        err(f"{spath}.source.profile.key", f"key {key!r} is not declared")
                fields = {"value", "version"}
            else:
                err(f"{spath}.source", "source must fetch a stream or a profile")
            if isinstance(into, str) and into and into not in bound:
                bound[into] = fields
        elif skind == "filter":
            over = step.get("over")
            if over not in bound:
                err(f"{spath}.over", f"variable {over!r} is not bound")
            into = step.get("into")
            if not isinstance(into, str) or not into:
                err(f"{spath}.into", "filter requires a variable name")
            elif into in bound:
                err(f"{spath}.into", f"variable {into!r} is already bound")
            predicate = step.get("predicate")
            if not isinstance(predicate, str):
                err(f"{spath}.predicate", "predicate is required")
            else:
                row_fields = bound.get(over) if over in bound else None
                for p in ex.validate(predicate, expr_scope(bare_fields=row_fields, allow_bare=True)):
                    err(f"{spath}.predicate", p)
            if isinstance(into, str) and into and into not in bound:
                bound[into] = bound.get(over)
        elif skind == "branch":
            cond = step.get("cond")
            if not isinstance(cond, str):
                err(f"{spath}.cond", "cond is required")
            else:
                for p in ex.validate(cond, expr_scope()):
                    err(f"{spath}.cond", p)
            check_actions(step.get("then", []), f"{spath}.then")
            check_actions(step.get("else", []), f"{spath}.else")
        else:
            err(spath, "step must be fetch, filter, or branch")

    check_actions(doc.get("actions", []), "actions")
    return errors


def _validate_payload_template(payload, scope: ex.StaticScope) -> list[str]:
    problems: list[str] = []

    def walk(node) -> None:
        if isinstance(node, str):
            problems.extend(ex.validate_template(node, scope))
        elif isinstance(node, dict):
            for v in node.values():
                walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    if payload is None:
        return ["webhook requires a payload template"]
    walk(payload)
    return problems


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


class RuleEngine:
    def __init__(self, storage: Storage, clock, collection: CollectionService,
                 profiles: ProfileService,
                 webhook_backoff: tuple[float, ...] = DEFAULT_WEBHOOK_BACKOFF,
                 catchup_horizon_minutes: int | None = DEFAULT_CATCHUP_HORIZON_MINUTES):
        self.storage = storage
        self.clock = clock
        self.collection = collection
        self.profiles = profiles
        self.webhook_backoff = webhook_backoff
        self.catchup_horizon = catchup_horizon_minutes
        self.timezone_of = lambda participant_id: timezone.utc          # wired
        self.study_timezone_of = lambda study_id, group_id: timezone.utc  # wired
        self._locks: dict[tuple, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._cron_cache: dict[str, CronExpression] = {}

    # -- registration -------------------------------------------------------

    def register_rule(self, study_id: str, rule_id: str, doc: dict) -> dict:
        errors = validate_rule_doc(doc, self.profiles, self.collection, study_id)
        if errors:
            raise ValidationFailed(errors)
        with self.storage.tx():
            self.storage.execute(
                "INSERT OR REPLACE INTO rules (study_id, rule_id, doc_json, enabled) "
                "VALUES (?, ?, ?, ?)",
                (study_id, rule_id, json.dumps(doc), 1 if doc.get("enabled", True) else 0),
            )
        return {"study_id": study_id, "rule_id": rule_id,
                "enabled": bool(doc.get("enabled", True))}

    def get_rule(self, study_id: str, rule_id: str) -> dict:
        row = self.storage.query_one(
            "SELECT doc_json, enabled FROM rules WHERE study_id = ? AND rule_id = ?",
            (study_id, rule_id),
        )
        if row is None:
            raise NotFound(f"rule {rule_id} in study {study_id}")
        return {"rule_id": rule_id, "doc": json.loads(row["doc_json"]),
                "enabled": bool(row["enabled"])}

    def list_rules(self, study_id: str) -> list[dict]:
        rows = self.storage.query(
            "SELECT rule_id FROM rules WHERE study_id = ? ORDER BY rule_id", (study_id,)
        )
        return [self.get_rule(study_id, r["rule_id"]) for r in rows]

    # -- data triggers --------------------------------------------------------

    def has_data_rules(self, study_id: str, stream: str) -> bool:
        rows = self.storage.query(
            "SELECT doc_json FROM rules WHERE study_id = ? AND enabled = 1", (study_id,)
        )
        for row in rows:
            trigger = json.loads(row["doc_json"]).get("trigger", {})
            if trigger.get("kind") == "data" and trigger.get("stream") == stream:
                return True
        return False

    def on_data(self, payload: dict) -> list[dict]:
        """Evaluate every enabled data rule subscribed to the point's stream."""
        study_id = payload["study_id"]
        if self._study_closed(study_id):
            return []
        rows = self.storage.query(
            "SELECT rule_id, doc_json FROM rules WHERE study_id = ? AND enabled = 1",
            (study_id,),
        )
        executions = []
        for row in rows:
            doc = json.loads(row["doc_json"])
            trigger = doc.get("trigger", {})
            if trigger.get("kind") != "data" or trigger.get("stream") != payload["stream"]:
                continue
            instance = _trigger_instance(
                "data", study_id, row["rule_id"], payload["participant"],
                payload["stream"], payload["timestamp"], payload["values_hash"],
            )
            execution = self._run_once(
                study_id, row["rule_id"], doc,
                participant=payload["participant"],
                fired_at=parse_ts(payload.get("ingested_at") or payload["timestamp"]),
                trigger_instance=instance,
                point_payload=payload,
            )
            if execution is not None:
                executions.append(execution)
        return executions

    # -- cron triggers ----------------------------------------------------------

    def on_tick(self, now: datetime) -> list[dict]:
        """Fire cron rules for every civil minute since the last tick.

        Missed minutes are replayed up to the catch-up horizon; the
        (rule, participant, civil-minute) dedup makes replays harmless.
        """
        now = now.astimezone(timezone.utc).replace(second=0, microsecond=0)
        with self.storage.tx():
            row = self.storage.query_one("SELECT last_tick FROM scheduler_state WHERE id = 1")
            last = parse_ts(row["last_tick"]) if row and row["last_tick"] else None
            self.storage.execute(
                "INSERT OR REPLACE INTO scheduler_state (id, last_tick) VALUES (1, ?)",
                (iso(now),),
            )
        if last is None:
            minutes = [now]
        else:
            if now <= last:
                return []
            gap = int((now - last).total_seconds() // 60)
            if self.catchup_horizon is not None:
                gap = min(gap, self.catchup_horizon)
            minutes = [now - timedelta(minutes=k) for k in range(gap - 1, -1, -1)]

        executions = []
        rules = self.storage.query(
            "SELECT r.study_id, r.rule_id, r.doc_json FROM rules r "
            "JOIN studies s ON s.study_id = r.study_id "
            "WHERE r.enabled = 1 AND s.status != 'closed'"
        )
        for row in rules:
            doc = json.loads(row["doc_json"])
            trigger = doc.get("trigger", {})
            if trigger.get("kind") != "cron":
                continue
            expr = self._cron(trigger["expr"])
            tz_mode = trigger.get("timezone_mode", "study")
            target = doc.get("target", "each_participant")
            study_id = row["study_id"]
            for minute in minutes:
                if target == "group" or tz_mode == "study":
                    for group_id in self._groups(study_id):
                        tz = self.study_timezone_of(study_id, group_id)
                        local = minute.astimezone(tz)
                        if not expr.matches(local):
                            continue
                        civil = local.strftime("%Y-%m-%dT%H:%M")
                        if target == "group":
                            instance = _trigger_instance(
                                "cron", study_id, row["rule_id"], f"group:{group_id}", civil
                            )
                            execution = self._run_once(
                                study_id, row["rule_id"], doc, participant=None,
                                fired_at=minute, trigger_instance=instance,
                                point_payload=None, group_id=group_id,
                            )
                            if execution is not None:
                                executions.append(execution)
                        else:
                            for pid in self._participants(study_id, group_id):
                                instance = _trigger_instance(
                                    "cron", study_id, row["rule_id"], pid, civil
                                )
                                execution = self._run_once(
                                    study_id, row["rule_id"], doc, participant=pid,
                                    fired_at=minute, trigger_instance=instance,
                                    point_payload=None,
                                )
                                if execution is not None:
                                    executions.append(execution)
                else:  # participant timezone mode
                    for pid in self._participants(study_id):
                        tz = self.timezone_of(pid)
                        local = minute.astimezone(tz)
                        if not expr.matches(local):
                            continue
                        civil = local.strftime("%Y-%m-%dT%H:%M")
                        instance = _trigger_instance(
                            "cron", study_id, row["rule_id"], pid, civil
                        )
                        execution = self._run_once(
                            study_id, row["rule_id"], doc, participant=pid,
                            fired_at=minute, trigger_instance=instance,
                            point_payload=None,
                        )
                        if execution is not None:
                            executions.append(execution)
        return executions

    def _cron(self, text: str) -> CronExpression:
        if text not in self._cron_cache:
            self._cron_cache[text] = CronExpression(text)
        return self._cron_cache[text]

    def _groups(self, study_id: str) -> list[str]:
        return [r["group_id"] for r in self.storage.query(
            "SELECT group_id FROM study_groups WHERE study_id = ? ORDER BY group_id",
            (study_id,),
        )]

    def _participants(self, study_id: str, group_id: str | None = None) -> list[str]:
        sql = "SELECT participant_id FROM participants WHERE study_id = ?"
        params: list = [study_id]
        if group_id is not None:
            sql += " AND group_id = ?"
            params.append(group_id)
        return [r["participant_id"] for r in self.storage.query(sql + " ORDER BY participant_id", params)]

    def _study_closed(self, study_id: str) -> bool:
        row = self.storage.query_one(
            "SELECT status FROM studies WHERE study_id = ?", (study_id,)
        )
        return row is None or row["status"] == "closed"

    # -- evaluation ---------------------------------------------------------------

    def _participant_lock(self, study_id: str, participant: str | None) -> threading.Lock:
        key = (study_id, participant)
        with self._locks_guard:
            if key not in self._locks:
                self._locks[key] = threading.Lock()
            return self._locks[key]

    def _completed_exists(self, trigger_instance: str) -> bool:
        return self.storage.query_one(
            "SELECT 1 FROM executions WHERE trigger_instance = ? AND status = 'completed'",
            (trigger_instance,),
        ) is not None

    def _run_once(self, study_id: str, rule_id: str, doc: dict,
                  participant: str | None, fired_at: datetime,
                  trigger_instance: str, point_payload: dict | None,
                  group_id: str | None = None) -> dict | None:
        """One dedup-guarded evaluation; None when this instance already ran."""
        if group_id is None and participant is not None:
            prow = self.storage.query_one(
                "SELECT group_id FROM participants WHERE participant_id = ?",
                (participant,),
            )
            group_id = prow["group_id"] if prow else None
        lock = self._participant_lock(study_id, participant)
        with lock:
            if self._completed_exists(trigger_instance):
                return None
            source = LiveDataSource(self.collection, self.profiles, study_id,
                                    participant, group_id)
            execution_id = f"ex-{trigger_instance[:16]}-{int(time.time() * 1000) % 10**9}"
            try:
                with self.storage.tx():
                    if self._completed_exists(trigger_instance):
                        return None
                    trace = self._evaluate(doc, study_id, participant, fired_at,
                                           point_payload, source, execute=True,
                                           trigger_instance=trigger_instance,
                                           group_id=group_id, rule_label=rule_id)
                    record = {
                        "execution_id": execution_id,
                        "study_id": study_id,
                        "rule_id": rule_id,
                        "participant": participant,
                        "trigger_instance": trigger_instance,
                        "fired_at": iso(fired_at),
                        "bindings": trace["bindings"],
                        "branch_decisions": trace["branch_decisions"],
                        "actions_taken": trace["actions"],
                        "status": "completed",
                    }
                    self._insert_execution(record)
                    return record
            except sqlite3.IntegrityError:
                return None  # lost a dedup race; the other evaluation won
            except (ex.EvalError, KernelError) as exc:
                record = {
                    "execution_id": execution_id,
                    "study_id": study_id,
                    "rule_id": rule_id,
                    "participant": participant,
                    "trigger_instance": trigger_instance,
                    "fired_at": iso(fired_at),
                    "bindings": {},
                    "branch_decisions": [],
                    "actions_taken": [],
                    "status": "failed",
                    "error": str(exc),
                }
                try:
                    with self.storage.tx():
                        self._insert_execution(record)
                except sqlite3.IntegrityError:
                    return None
                return record

    def _insert_execution(self, record: dict) -> None:
        self.storage.execute(
            "INSERT INTO executions (execution_id, study_id, rule_id, participant, "
            "trigger_instance, fired_at, bindings_json, actions_json, status, error) "
            "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
            (
                record["execution_id"], record["study_id"], record["rule_id"],
                record["participant"], record["trigger_instance"], record["fired_at"],
                json.dumps({"bindings": record["bindings"],
                            "branch_decisions": record["branch_decisions"]}),
                json.dumps(record["actions_taken"]),
                record["status"], record.get("error"),
            ),
        )

    def _evaluate(self, doc: dict, study_id: str, participant: str | None,
                  fired_at: datetime, point_payload: dict | None, source,
                  execute: bool, trigger_instance: str,
                  group_id: str | None = None, rule_label: str = "rule") -> dict:
        """Run the pipeline and actions; the uniform core for live runs and
        dry runs. Raises EvalError (with step context) on runtime failures.
        """
        profile_view = source.profile_view()
        dotted: dict[str, dict] = {"profile": profile_view}
        if point_payload is not None:
            point_ctx = {
                "stream": point_payload["stream"],
                "participant": point_payload["participant"],
                "timestamp": point_payload["timestamp"],
                "date": point_payload["date"],
            }
            point_ctx.update(point_payload.get("values", {}))
            dotted["point"] = point_ctx

        bindings: dict[str, list[dict]] = {}
        branch_decisions: list[bool] = []
        actions_taken: list[dict] = []
        branch_ran = False

        def ctx(bare=None) -> ex.EvalContext:
            return ex.EvalContext(bare=bare, dotted=dotted, var_rows=bindings)

        def run_actions(specs: list[dict]) -> None:
            for spec in specs:
                outcome = self.execute_action(
                    spec, study_id, participant, ctx(), trigger_instance,
                    execute=execute, rule_label=rule_label, group_id=group_id,
                )
                actions_taken.append({"action": spec.get("action"), "spec": spec,
                                      "outcome": outcome})

        for index, step in enumerate(doc.get("pipeline", [])):
            try:
                skind = step.get("step")
                if skind == "fetch":
                    rows = self._fetch(step["source"], source, fired_at)
                    bindings[step["into"]] = rows
                elif skind == "filter":
                    rows = bindings.get(step["over"], [])
                    predicate = ex.parse(step["predicate"])
                    kept = []
                    for row in rows:
                        row_ctx = ex.EvalContext(
                            bare=lambda name, row=row: row.get(name),
                            dotted=dotted, var_rows=bindings,
                        )
                        if ex.truthy(ex.evaluate(predicate, row_ctx)):
                            kept.append(row)
                    bindings[step["into"]] = kept
                elif skind == "branch":
                    decision = ex.truthy(ex.evaluate_text(step["cond"], ctx()))
                    branch_decisions.append(decision)
                    branch_ran = True
                    run_actions(step.get("then" if decision else "else", []) or [])
            except ex.EvalError as exc:
                raise ex.EvalError(f"step {index}: {exc}") from exc

        if not branch_ran:
            run_actions(doc.get("actions", []) or [])

        return {
            "bindings": bindings,
            "branch_decisions": branch_decisions,
            "actions": actions_taken,
            "status": "completed",
        }

    def _fetch(self, spec: dict, source, fired_at: datetime) -> list[dict]:
        if "stream" in spec:
            if spec.get("count") is not None:
                return source.stream_last(spec["stream"], int(spec["count"]), fired_at)
            window = parse_duration(spec["window"])
            return source.stream_window(spec["stream"], fired_at - window, fired_at)
        pspec = spec["profile"]
        return source.profile_rows(pspec["scope"], pspec["key"])

    # -- dry run --------------------------------------------------------------

    def dry_run(self, study_id: str, doc: dict, context: dict) -> dict:
        """Evaluate a rule against a synthetic context with no side effects."""
        errors = validate_rule_doc(doc, self.profiles, self.collection, study_id)
        if errors:
            raise ValidationFailed(errors)
        source = SyntheticDataSource(context)
        participant = context.get("participant", "dry-run-participant")
        fired_at = parse_ts(context["now"]) if context.get("now") else self.clock.now()
        point_payload = None
        point = context.get("point")
        if point is not None:
            trigger = doc.get("trigger", {})
            tz = timezone.utc
            ts = parse_ts(point.get("timestamp", iso(fired_at)))
            point_payload = {
                "study_id": study_id,
                "stream": point.get("stream", trigger.get("stream", "")),
                "participant": participant,
                "timestamp": iso(ts),
                "date": ts.astimezone(tz).date().isoformat(),
                "values": point.get("values", {}),
                "values_hash": content_hash(point.get("values", {})),
                "source": "dry-run",
            }
        try:
            trace = self._evaluate(doc, study_id, participant, fired_at,
                                   point_payload, source, execute=False,
                                   trigger_instance="dry-run", group_id=None)
        except ex.EvalError as exc:
            return {"status": "failed", "error": str(exc), "bindings": {},
                    "branch_decisions": [], "actions": []}
        return trace

    # -- actions ----------------------------------------------------------------

    def execute_action(self, spec: dict, study_id: str, participant: str | None,
                       ctx: ex.EvalContext, trigger_instance: str,
                       execute: bool = True, rule_label: str | None = None,
                       group_id: str | None = None) -> dict:
        """Run (or render, for dry runs) one action; outcomes never raise."""
        kind = spec.get("action")
        warn = lambda msg: logger.warning("interpolation: %s", msg)
        try:
            if kind == "send_email":
                subject = ex.interpolate(spec.get("subject", ""), ctx, warn)
                body = self._email_body(spec, study_id, ctx, warn)
                recipients = self._email_recipients(spec.get("to"), study_id, participant)
                if not execute:
                    return {"status": "dry-run", "channel": "email",
                            "recipients": recipients, "subject": subject, "body": body}
                for recipient in recipients:
                    self._outbox(study_id, rule_label or "rule", participant, "email",
                                 spec.get("to"), recipient, subject, body)
                return {"status": "delivered", "channel": "email",
                        "recipients": recipients, "subject": subject, "body": body}
            if kind == "send_push":
                title = ex.interpolate(spec.get("title", ""), ctx, warn)
                body = ex.interpolate(spec.get("body", ""), ctx, warn)
                channel = spec.get("channel", "internal")
                if participant is None:
                    return {"status": "failed", "error": "push requires a participant"}
                if not execute:
                    return {"status": "dry-run", "channel": "push",
                            "push_channel": channel, "title": title, "body": body}
                self._outbox(study_id, rule_label or "rule", participant, "push",
                             channel, f"participant:{participant}", title, body)
                return {"status": "delivered", "channel": "push",
                        "push_channel": channel, "title": title, "body": body}
            if kind == "write_profile":
                value = ex.evaluate_text(spec["value_expr"], ctx)
                scope = spec.get("scope", "participant")
                if not execute:
                    return {"status": "dry-run", "scope": scope,
                            "key": spec["key"], "value": value}
                if value is None:
                    return {"status": "failed",
                            "error": "value_expr evaluated to null; nothing written"}
                if scope == "participant":
                    scope_id = participant
                else:
                    scope_id = _group_scope(study_id, group_id) if group_id else None
                if scope_id is None:
                    return {"status": "failed", "error": "no target for profile write"}
                version = self.profiles.set_value(
                    study_id, scope, scope_id, spec["key"], value,
                    writer_role="service", writer_id="rpii",
                )
                return {"status": "ok", "scope": scope, "key": spec["key"],
                        "value": value, "version": version}
            if kind == "webhook":
                payload = _render_payload(spec.get("payload"), ctx, warn)
                if not execute:
                    return {"status": "dry-run", "url": spec["url"], "payload": payload}
                return self._deliver_webhook(study_id, spec["url"], payload,
                                             trigger_instance)
        except (ex.EvalError, KernelError) as exc:
            return {"status": "failed", "error": str(exc)}
        return {"status": "failed", "error": f"unknown action {kind!r}"}

    def _email_body(self, spec: dict, study_id: str, ctx, warn) -> str:
        template_id = spec.get("template_id")
        if template_id:
            row = self.storage.query_one(
                "SELECT templates_json FROM studies WHERE study_id = ?", (study_id,)
            )
            templates = json.loads(row["templates_json"]) if row else {}
            template = templates.get(template_id)
            if template is None:
                raise BadRequest(f"unknown email template {template_id!r}")
            return ex.interpolate(template, ctx, warn)
        return ex.interpolate(spec.get("body", ""), ctx, warn)

    def _email_recipients(self, to, study_id: str, participant: str | None) -> list[str]:
        if to == "participant":
            return [f"participant:{participant}"] if participant else []
        role = to.get("role") if isinstance(to, dict) else None
        rows = self.storage.query(
            "SELECT principal_id FROM grants WHERE role = ? AND study_id IN (?, '*') "
            "ORDER BY principal_id",
            (role, study_id),
        )
        return [f"principal:{r['principal_id']}" for r in rows]

    def _outbox(self, study_id: str, rule_label: str, participant: str | None,
                channel: str, kind, recipient: str, title: str, body: str) -> None:
        self.storage.execute(
            "INSERT INTO outbox (study_id, rule_id, participant, channel, kind, "
            "recipient, title, body, created_at, status, attempts) "
            "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, 'delivered', 1)",
            (study_id, rule_label, participant, channel,
             json.dumps(kind) if not isinstance(kind, str) else kind,
             recipient, title, body, iso(self.clock.now())),
        )

    def _deliver_webhook(self, study_id: str, url: str, payload,
                         idempotency_key: str) -> dict:
        body = json.dumps(payload).encode("utf-8")
        row = self.storage.query_one(
            "SELECT secret FROM studies WHERE study_id = ?", (study_id,)
        )
        secret = row["secret"] if row else ""
        signature = hmaclib.new(secret.encode("utf-8"), body, hashlib.sha256).hexdigest()
        headers = {
            "Content-Type": "application/json",
            "X-Idempotency-Key": idempotency_key,
            "X-Signature": f"sha256={signature}",
        }
        # One initial attempt plus one retry per backoff entry.
        attempts = 0
        last_error = None
        for delay in (0.0,) + tuple(self.webhook_backoff):
            if delay:
                time.sleep(delay)
            attempts += 1
            try:
                req = urllib.request.Request(url, data=body, headers=headers, method="POST")
                with urllib.request.urlopen(req, timeout=10) as resp:
                    status = resp.status
                if 200 <= status < 300:
                    return {"status": "delivered", "attempts": attempts,
                            "response_status": status}
                last_error = f"status {status}"
            except urllib.error.HTTPError as exc:
                last_error = f"status {exc.code}"
            except (urllib.error.URLError, OSError) as exc:
                last_error = str(exc)
        return {"status": "failed", "attempts": attempts, "error": last_error}

    # -- sdk ------------------------------------------------------------------

    def sdk_fetch(self, study_id: str, queries: list[dict]) -> list[dict]:
        """Batched stream/profile reads with etags for client-side caching."""
        out = []
        for q in queries:
            if q.get("kind") == "stream":
                before = parse_ts(q["before"]) if q.get("before") else self.clock.now()
                window = parse_duration(q.get("window", "24h"))
                rows = self.collection.query_stream(
                    study_id, q["stream"], participant=q.get("participant"),
                    ts_from=before - window, ts_to=before,
                )
                result = {"kind": "stream", "stream": q["stream"], "rows": rows}
            elif q.get("kind") == "profile":
                scope = q.get("scope", "participant")
                scope_id = (q["id"] if scope == "participant"
                            else _group_scope(study_id, q["id"]))
                value, version = self.profiles.current_value(scope, scope_id, q["key"])
                result = {"kind": "profile", "key": q["key"],
                          "value": value, "version": version}
            else:
                out.append({"error": "bad-query", "message": "kind must be stream or profile"})
                continue
            etag = content_hash(result)
            if q.get("etag") == etag:
                out.append({"not_modified": True, "etag": etag})
            else:
                result["etag"] = etag
                out.append(result)
        return out

    def sdk_invoke(self, study_id: str, actions: list[dict],
                   participant: str | None = None,
                   idempotency_key: str | None = None) -> dict:
        """Run actions outside any rule; logged with rule_id=external."""
        instance = idempotency_key or f"sdk-{time.time_ns()}"
        trigger_instance = _trigger_instance("sdk", study_id, instance)
        lock = self._participant_lock(study_id, participant)
        with lock:
            existing = self.storage.query_one(
                "SELECT execution_id, actions_json FROM executions "
                "WHERE trigger_instance = ? AND status = 'completed'",
                (trigger_instance,),
            )
            if existing is not None:
                return {"execution_id": existing["execution_id"],
                        "outcomes": json.loads(existing["actions_json"]),
                        "deduplicated": True}
            group_id = None
            if participant is not None:
                prow = self.storage.query_one(
                    "SELECT group_id FROM participants WHERE participant_id = ?",
                    (participant,),
                )
                group_id = prow["group_id"] if prow else None
            source = LiveDataSource(self.collection, self.profiles, study_id,
                                    participant, group_id)
            ctx = ex.EvalContext(dotted={"profile": source.profile_view()})
            outcomes = []
            execution_id = f"ex-sdk-{time.time_ns()}"
            with self.storage.tx():
                for spec in actions:
                    outcome = self.execute_action(
                        spec, study_id, participant, ctx, trigger_instance,
                        execute=True, rule_label="external", group_id=group_id,
                    )
                    outcomes.append({"action": spec.get("action"), "spec": spec,
                                     "outcome": outcome})
                self._insert_execution({
                    "execution_id": execution_id,
                    "study_id": study_id,
                    "rule_id": "external",
                    "participant": participant,
                    "trigger_instance": trigger_instance,
                    "fired_at": iso(self.clock.now()),
                    "bindings": {},
                    "branch_decisions": [],
                    "actions_taken": outcomes,
                    "status": "completed",
                })
            return {"execution_id": execution_id, "outcomes": outcomes,
                    "deduplicated": False}

    # -- queries -----------------------------------------------------------------

    def list_executions(self, study_id: str | None = None, rule_id: str | None = None,
                        participant: str | None = None,
                        status: str | None = None) -> list[dict]:
        sql = "SELECT * FROM executions WHERE 1=1"
        params: list = []
        if study_id is not None:
            sql += " AND study_id = ?"
            params.append(study_id)
        if rule_id is not None:
            sql += " AND rule_id = ?"
            params.append(rule_id)
        if participant is not None:
            sql += " AND participant = ?"
            params.append(participant)
        if status is not None:
            sql += " AND status = ?"
            params.append(status)
        sql += " ORDER BY fired_at, execution_id"
        rows = self.storage.query(sql, params)
        out = []
        for r in rows:
            blob = json.loads(r["bindings_json"])
            out.append({
                "execution_id": r["execution_id"],
                "study_id": r["study_id"],
                "rule_id": r["rule_id"],
                "participant": r["participant"],
                "trigger_instance": r["trigger_instance"],
                "fired_at": r["fired_at"],
                "bindings": blob.get("bindings", {}),
                "branch_decisions": blob.get("branch_decisions", []),
                "actions_taken": json.loads(r["actions_json"]),
                "status": r["status"],
                "error": r["error"],
            })
        return out


def _render_payload(node, ctx: ex.EvalContext, warn):
    """Render a JSON payload template: a string that is exactly one
    "{{expr}}" becomes the typed value; other strings interpolate as text."""
    if isinstance(node, str):
        stripped = node.strip()
        if stripped.startswith("{{") and stripped.endswith("}}") and stripped.count("{{") == 1:
            return ex.evaluate_text(stripped[2:-2], ctx)
        return ex.interpolate(node, ctx, warn)
    if isinstance(node, dict):
        return {k: _render_payload(v, ctx, warn) for k, v in node.items()}
    if isinstance(node, list):
        return [_render_payload(v, ctx, warn) for v in node]
    return node
