"""Declarative questionnaire/EMA engine.

An interaction document is an ordered list of components with optional
show_if conditions, a variables map, and an optional availability window
evaluated against the participant's profile in their timezone. Validation is
exhaustive (all problems reported, never fail-fast) and enforces the
forward-only rule: a show_if may depend, directly or through variables, only
on components declared earlier, which makes single-pass evaluation total.

Submitted answers are mirrored into the data stream "interaction.<id>"
(one point per answered component, source=interaction) so data-triggered
rules can react to EMA answers.
"""

from __future__ import annotations

import json
import logging
import re
from datetime import datetime, timedelta, timezone

from . import expressions as ex
from .collection import CollectionService
from .errors import (
    BadRequest,
    InconsistentResponse,
    NotAvailable,
    NotFound,
    ValidationFailed,
)
from .profiles import ATTACHMENT_REF_PREFIX, ProfileService
from .storage import Storage
from .util import iso, parse_ts, random_id

logger = logging.getLogger(__name__)

COMPONENT_KINDS = {
    "multiple_choice", "numeric_input", "text_input", "time_picker",
    "date_picker", "slider", "info", "media", "recorder", "custom",
}
ANSWERABLE_KINDS = COMPONENT_KINDS - {"info", "media"}
MEDIA_KINDS = {"video", "image", "audio"}
RECORDER_KINDS = {"audio", "audio_video"}

_TIME_RE = re.compile(r"^([01]?\d|2[0-3]):([0-5]\d)$")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")

# Stream schema for mirrored EMA answers.
MIRROR_SCHEMA = {"component": "text", "value": "text", "numeric": "number"}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


class InteractionService:
    def __init__(self, storage: Storage, clock, profiles: ProfileService,
                 collection: CollectionService):
        self.storage = storage
        self.clock = clock
        self.profiles = profiles
        self.collection = collection
        self.timezone_of = lambda participant_id: timezone.utc  # wired

    # -- definitions --------------------------------------------------------

    def validate_definition(self, study_id: str, doc: dict) -> list[dict]:
        """Static validation; returns every problem as {path, message}."""
        errors: list[dict] = []

        def err(path: str, message: str) -> None:
            errors.append({"path": path, "message": message})

        if not isinstance(doc, dict):
            return [{"path": "", "message": "document must be an object"}]
        if doc.get("format") != 1:
            err("format", "format must be 1")

        components = doc.get("components")
        if not isinstance(components, list) or not components:
            err("components", "at least one component is required")
            components = []

        schema_keys = set(self.profiles.get_schema(study_id)["keys"])
        variables = doc.get("variables", {})
        if not isinstance(variables, dict):
            err("variables", "variables must be a map of name -> expression")
            variables = {}

        ids: list[str] = []
        for i, comp in enumerate(components):
            path = f"components[{i}]"
            if not isinstance(comp, dict):
                err(path, "component must be an object")
                continue
            cid = comp.get("id")
            if not isinstance(cid, str) or not cid:
                err(f"{path}.id", "component id is required")
                continue
            if cid in ids:
                err(f"{path}.id", f"duplicate component id {cid!r}")
            ids.append(cid)
            kind = comp.get("kind")
            config = comp.get("config", {})
            if kind not in COMPONENT_KINDS:
                err(f"{path}.kind", f"kind must be one of {sorted(COMPONENT_KINDS)}")
            elif kind == "slider":
                lo, hi = config.get("min"), config.get("max")
                if not (_is_number(lo) and _is_number(hi) and lo < hi):
                    err(f"{path}.config", "slider requires numeric min < max")
                step = config.get("step")
                if step is not None and (not _is_number(step) or step <= 0):
                    err(f"{path}.config.step", "step must be a positive number")
            elif kind == "multiple_choice":
                choices = config.get("choices")
                if not isinstance(choices, list) or len(choices) < 2:
                    err(f"{path}.config.choices", "multiple_choice requires at least 2 choices")
            elif kind == "numeric_input":
                lo, hi = config.get("min"), config.get("max")
                if lo is not None and hi is not None and _is_number(lo) and _is_number(hi) and lo > hi:
                    err(f"{path}.config", "numeric min must be <= max")
            elif kind == "media":
                if config.get("media_kind") not in MEDIA_KINDS:
                    err(f"{path}.config.media_kind", f"must be one of {sorted(MEDIA_KINDS)}")
                ref = config.get("attachment_ref")
                if not (isinstance(ref, str) and ref.startswith(ATTACHMENT_REF_PREFIX)):
                    err(f"{path}.config.attachment_ref", "media requires an attachment-ref")
            elif kind == "recorder":
                if config.get("recorder_kind") not in RECORDER_KINDS:
                    err(f"{path}.config.recorder_kind", f"must be one of {sorted(RECORDER_KINDS)}")
            elif kind == "custom":
                if not isinstance(config.get("name"), str) or not config.get("name"):
                    err(f"{path}.config.name", "custom component requires a name")
                # The rest of the config is an opaque envelope for the client.

        # Variable dependency analysis: cycles and component references.
        var_exprs: dict[str, object] = {}
        var_component_refs: dict[str, set[str]] = {}
        var_var_refs: dict[str, set[str]] = {}
        for name, text in variables.items():
            if not isinstance(text, str):
                err(f"variables.{name}", "expression must be text")
                continue
            try:
                node = ex.parse(text)
            except ex.ExpressionError as exc:
                err(f"variables.{name}", str(exc))
                continue
            var_exprs[name] = node
            comp_refs, var_refs = set(), set()
            for base, attr in ex.references(node):
                if base == "answers" and attr is not None:
                    if attr not in ids:
                        err(f"variables.{name}", f"unknown component {attr!r}")
                    comp_refs.add(attr)
                elif base == "profile" and attr is not None:
                    if schema_keys and attr not in schema_keys:
                        err(f"variables.{name}", f"unknown profile key {attr!r}")
                elif attr is None:
                    if base not in variables:
                        err(f"variables.{name}", f"unknown name {base!r}")
                    var_refs.add(base)
                else:
                    err(f"variables.{name}", f"unknown reference {base}.{attr}")
            var_component_refs[name] = comp_refs
            var_var_refs[name] = var_refs

        order = _topo_order(var_var_refs)
        if order is None:
            err("variables", "cyclic variable references")
        else:
            # Transitive closure of component references through variables.
            for name in order:
                closure = set(var_component_refs.get(name, set()))
                for dep in var_var_refs.get(name, set()):
                    closure |= var_component_refs.get(dep, set())
                var_component_refs[name] = closure

        # show_if expressions: forward-only component dependencies.
        for i, comp in enumerate(components):
            if not isinstance(comp, dict):
                continue
            show_if = comp.get("show_if")
            if show_if is None:
                continue
            path = f"components[{i}].show_if"
            if not isinstance(show_if, str):
                err(path, "show_if must be an expression")
                continue
            try:
                node = ex.parse(show_if)
            except ex.ExpressionError as exc:
                err(path, str(exc))
                continue
            earlier = set(ids[:i])
            for base, attr in ex.references(node):
                if base == "answers" and attr is not None:
                    if attr not in ids:
                        err(path, f"unknown component {attr!r}")
                    elif attr not in earlier:
                        err(path, f"show_if may only reference earlier components, not {attr!r}")
                elif base == "profile" and attr is not None:
                    if schema_keys and attr not in schema_keys:
                        err(path, f"unknown profile key {attr!r}")
                elif attr is None:
                    if base not in variables:
                        err(path, f"unknown name {base!r}")
                    else:
                        for dep in var_component_refs.get(base, set()):
                            if dep not in earlier:
                                err(path, f"variable {base!r} depends on later component {dep!r}")
                else:
                    err(path, f"unknown reference {base}.{attr}")

        availability = doc.get("availability")
        if availability is not None:
            if not isinstance(availability, dict):
                err("availability", "availability must be an object")
            else:
                for field in ("window_start_expr", "window_end_expr"):
                    text = availability.get(field)
                    if not isinstance(text, str):
                        err(f"availability.{field}", f"{field} is required")
                        continue
                    scope = ex.StaticScope(
                        dotted_fields={"profile": schema_keys or None},
                        bare_names={"start"} if field == "window_end_expr" else set(),
                    )
                    for p in ex.validate(text, scope):
                        err(f"availability.{field}", p)

        return errors

    def put_definition(self, study_id: str, interaction_id: str, doc: dict) -> dict:
        """Validate and store; versions auto-increment per interaction id."""
        errors = self.validate_definition(study_id, doc)
        if errors:
            raise ValidationFailed(errors)
        with self.storage.tx():
            row = self.storage.query_one(
                "SELECT MAX(version) AS v FROM interactions "
                "WHERE study_id = ? AND interaction_id = ?",
                (study_id, interaction_id),
            )
            version = (row["v"] or 0) + 1
            normalized = dict(doc)
            normalized["interaction_id"] = interaction_id
            normalized["version"] = version
            self.storage.execute(
                "INSERT INTO interactions (study_id, interaction_id, version, "
                "doc_json, created_at) VALUES (?, ?, ?, ?, ?)",
                (study_id, interaction_id, version, json.dumps(normalized),
                 iso(self.clock.now())),
            )
        return {"interaction_id": interaction_id, "version": version}

    def get_definition(self, study_id: str, interaction_id: str,
                       version: int | None = None) -> dict:
        if version is None:
            row = self.storage.query_one(
                "SELECT doc_json FROM interactions WHERE study_id = ? AND "
                "interaction_id = ? ORDER BY version DESC LIMIT 1",
                (study_id, interaction_id),
            )
        else:
            row = self.storage.query_one(
                "SELECT doc_json FROM interactions WHERE study_id = ? AND "
                "interaction_id = ? AND version = ?",
                (study_id, interaction_id, version),
            )
        if row is None:
            raise NotFound(f"interaction {interaction_id} in study {study_id}")
        return json.loads(row["doc_json"])

    def list_definitions(self, study_id: str) -> list[dict]:
        rows = self.storage.query(
            "SELECT DISTINCT interaction_id FROM interactions WHERE study_id = ? "
            "ORDER BY interaction_id",
            (study_id,),
        )
        return [self.get_definition(study_id, r["interaction_id"]) for r in rows]

    # -- visibility -----------------------------------------------------------

    def visible_set(self, definition: dict, answers: dict, profile_view: dict) -> list[str]:
        """Ordered component ids visible under the given partial answers.

        Pure single pass in document order. Conditions see only the answers
        of components already visible: an answer to a hidden component never
        resurrects later ones (it reads as null, and null conditions are
        false).
        """
        visible = []
        effective: dict = {}
        for comp in definition.get("components", []):
            show_if = comp.get("show_if")
            if show_if is not None:
                variables = self._eval_variables(definition, effective, profile_view)
                ctx = ex.EvalContext(
                    bare=lambda name, v=variables: v.get(name),
                    dotted={"profile": profile_view, "answers": effective},
                )
                if not ex.truthy(ex.evaluate_text(show_if, ctx)):
                    continue
            cid = comp["id"]
            visible.append(cid)
            if cid in answers:
                effective[cid] = answers[cid]
        return visible

    def _eval_variables(self, definition: dict, answers: dict,
                        profile_view: dict) -> dict:
        variables = definition.get("variables", {}) or {}
        deps = {}
        for name, text in variables.items():
            refs = ex.references(ex.parse(text))
            deps[name] = {base for base, attr in refs if attr is None}
        order = _topo_order(deps)
        values: dict = {}
        ctx = ex.EvalContext(
            bare=lambda name: values.get(name),
            dotted={"profile": profile_view, "answers": answers},
        )
        for name in order or []:
            try:
                values[name] = ex.evaluate_text(variables[name], ctx)
            except ex.EvalError:
                values[name] = None
        return values

    # -- availability ----------------------------------------------------------

    def availability_window(self, definition: dict, participant_id: str,
                            date_text: str) -> tuple[datetime, datetime] | None:
        """UTC (start, end) of the window on a civil date, or None when the
        interaction is always available (no clause, or malformed values)."""
        availability = definition.get("availability")
        if not availability:
            return None
        profile_view = self.profiles.profile_view(
            self._study_of(participant_id), participant_id
        )
        ctx = ex.EvalContext(dotted={"profile": profile_view})
        try:
            start_raw = ex.evaluate_text(availability["window_start_expr"], ctx)
        except ex.EvalError:
            start_raw = None
        start_minutes = _as_minutes(start_raw)
        if start_minutes is None:
            logger.warning(
                "availability start %r is not a usable time; treating as always available",
                start_raw,
            )
            return None
        end_ctx = ex.EvalContext(
            bare=lambda name: start_minutes if name == "start" else None,
            dotted={"profile": profile_view},
        )
        try:
            end_raw = ex.evaluate_text(availability["window_end_expr"], end_ctx)
        except ex.EvalError:
            end_raw = None
        end_minutes = _as_minutes(end_raw)
        if end_minutes is None:
            logger.warning(
                "availability end %r is not a usable time; treating as always available",
                end_raw,
            )
            return None
        if end_minutes <= start_minutes:
            end_minutes += 24 * 60  # window crosses midnight

        tz = self.timezone_of(participant_id)
        try:
            day = datetime.strptime(date_text, "%Y-%m-%d")
        except ValueError:
            raise BadRequest(f"bad date {date_text!r}")
        midnight = day.replace(tzinfo=tz)
        start = (midnight + timedelta(minutes=start_minutes)).astimezone(timezone.utc)
        end = (midnight + timedelta(minutes=end_minutes)).astimezone(timezone.utc)
        return start, end

    def is_available(self, definition: dict, participant_id: str,
                     now: datetime) -> bool:
        if not definition.get("availability"):
            return True
        tz = self.timezone_of(participant_id)
        local = now.astimezone(tz)
        for day in (local.date(), local.date() - timedelta(days=1)):
            window = self.availability_window(definition, participant_id, day.isoformat())
            if window is None:
                return True
            start, end = window
            if start <= now < end:
                return True
        return False

    def list_available(self, participant_id: str, now: datetime) -> list[dict]:
        study_id = self._study_of(participant_id)
        out = []
        for definition in self.list_definitions(study_id):
            if self.is_available(definition, participant_id, now):
                out.append(definition)
        return out

    def _study_of(self, participant_id: str) -> str:
        row = self.storage.query_one(
            "SELECT study_id FROM participants WHERE participant_id = ?",
            (participant_id,),
        )
        if row is None:
            raise NotFound(f"participant {participant_id}")
        return row["study_id"]

    # -- responses ---------------------------------------------------------------

    def submit_response(self, participant_id: str, interaction_id: str,
                        answers: dict, meta: dict | None = None,
                        started_at: str | None = None) -> dict:
        study_id = self._study_of(participant_id)
        definition = self.get_definition(study_id, interaction_id)
        now = self.clock.now()
        if not self.is_available(definition, participant_id, now):
            raise NotAvailable(f"interaction {interaction_id} is not open right now")

        components = {c["id"]: c for c in definition.get("components", [])}
        if not isinstance(answers, dict):
            raise BadRequest("answers must be a map of component id -> value")
        for cid, value in answers.items():
            comp = components.get(cid)
            if comp is None:
                raise InconsistentResponse(f"answer to undeclared component {cid!r}")
            if comp.get("kind") not in ANSWERABLE_KINDS:
                raise InconsistentResponse(f"component {cid!r} does not take answers")
            problem = _check_answer(comp, value)
            if problem:
                raise BadRequest(f"answer for {cid!r}: {problem}")

        profile_view = self.profiles.profile_view(study_id, participant_id)
        visible = self.visible_set(definition, answers, profile_view)
        visible_set = set(visible)
        for cid in answers:
            if cid not in visible_set:
                raise InconsistentResponse(
                    f"component {cid!r} is not visible under these answers"
                )
        for cid in visible:
            comp = components[cid]
            if comp.get("required") and comp.get("kind") in ANSWERABLE_KINDS:
                if cid not in answers:
                    raise InconsistentResponse(f"required component {cid!r} unanswered")

        response_id = f"rs-{random_id(12)}"
        version = definition.get("version")
        with self.storage.tx():
            self.storage.execute(
                "INSERT INTO responses (response_id, study_id, interaction_id, version, "
                "participant, answers_json, meta_json, started_at, submitted_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (response_id, study_id, interaction_id, version, participant_id,
                 json.dumps(answers), json.dumps(meta or {}), started_at, iso(now)),
            )
        self._mirror_answers(study_id, participant_id, interaction_id, answers, now)
        return {"response_id": response_id, "interaction_id": interaction_id,
                "version": version, "points_appended": len(answers)}

    def _mirror_answers(self, study_id: str, participant_id: str,
                        interaction_id: str, answers: dict, now: datetime) -> None:
        stream = f"interaction.{interaction_id}"
        try:
            self.collection.get_stream(study_id, stream)
        except NotFound:
            self.collection.register_stream(study_id, stream, dict(MIRROR_SCHEMA),
                                            sensitive=False, inferred=True)
        points = []
        for cid, value in answers.items():
            if _is_number(value):
                numeric, text = float(value), str(value)
            elif isinstance(value, bool):
                numeric, text = (1.0 if value else 0.0), str(value).lower()
            elif isinstance(value, str):
                numeric, text = None, value
            else:
                numeric, text = None, json.dumps(value, sort_keys=True)
            values = {"component": cid, "value": text}
            if numeric is not None:
                values["numeric"] = numeric
            points.append({"stream": stream, "timestamp": iso(now), "values": values})
        result = self.collection.ingest_batch(
            study_id, participant_id, points, source="interaction"
        )
        if result["rejected"]:
            logger.warning("mirrored answers partially rejected: %s", result["rejected"])

    def get_response(self, response_id: str) -> dict:
        row = self.storage.query_one(
            "SELECT * FROM responses WHERE response_id = ?", (response_id,)
        )
        if row is None:
            raise NotFound(f"response {response_id}")
        return {
            "response_id": row["response_id"],
            "study_id": row["study_id"],
            "interaction_id": row["interaction_id"],
            "version": row["version"],
            "participant": row["participant"],
            "answers": json.loads(row["answers_json"]),
            "meta": json.loads(row["meta_json"]),
            "started_at": row["started_at"],
            "submitted_at": row["submitted_at"],
        }

    def list_responses(self, study_id: str, interaction_id: str | None = None,
                       participant: str | None = None) -> list[dict]:
        sql = "SELECT response_id FROM responses WHERE study_id = ?"
        params: list = [study_id]
        if interaction_id is not None:
            sql += " AND interaction_id = ?"
            params.append(interaction_id)
        if participant is not None:
            sql += " AND participant = ?"
            params.append(participant)
        rows = self.storage.query(sql + " ORDER BY submitted_at, response_id", params)
        return [self.get_response(r["response_id"]) for r in rows]


def _check_answer(comp: dict, value) -> str | None:
    kind = comp.get("kind")
    config = comp.get("config", {})
    if kind == "multiple_choice":
        if value not in config.get("choices", []):
            return "not one of the declared choices"
    elif kind == "numeric_input":
        if not _is_number(value):
            return "must be a number"
        lo, hi = config.get("min"), config.get("max")
        if lo is not None and value < lo:
            return f"below minimum {lo}"
        if hi is not None and value > hi:
            return f"above maximum {hi}"
    elif kind == "slider":
        if not _is_number(value):
            return "must be a number"
        if value < config["min"] or value > config["max"]:
            return "outside the slider range"
    elif kind == "text_input":
        if not isinstance(value, str):
            return "must be text"
    elif kind == "time_picker":
        if not isinstance(value, str) or not _TIME_RE.match(value):
            return "must be HH:MM"
    elif kind == "date_picker":
        if not isinstance(value, str) or not _DATE_RE.match(value):
            return "must be YYYY-MM-DD"
    elif kind == "recorder":
        if not (isinstance(value, str) and value.startswith(ATTACHMENT_REF_PREFIX)):
            return "must be an attachment-ref"
    # custom: opaque envelope, any JSON value is accepted
    return None


def _as_minutes(value) -> int | None:
    """Interpret a window expression result as minutes since local midnight."""
    if _is_number(value):
        v = int(value)
        return v if 0 <= v < 2 * 24 * 60 else None
    if isinstance(value, str):
        m = _TIME_RE.match(value.strip())
        if m:
            return int(m.group(1)) * 60 + int(m.group(2))
    return None


def _topo_order(deps: dict[str, set[str]]) -> list[str] | None:
    """Topological order of the dependency map, or None on a cycle."""
    state: dict[str, int] = {}
    order: list[str] = []

    def visit(name: str) -> bool:
        mark = state.get(name, 0)
        if mark == 1:
            return False  # cycle
        if mark == 2:
            return True
        state[name] = 1
        for dep in deps.get(name, set()):
            if dep in deps and not visit(dep):
                return False
        state[name] = 2
        order.append(name)
        return True

    for name in deps:
        if not visit(name):
            return None
    return order
