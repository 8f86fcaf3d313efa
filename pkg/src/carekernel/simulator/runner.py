"""Scenario execution.

The runner performs the study setup through the management API, enrolls the
scripted participants, then replays one merged timeline of generated points
and scripted events in simulated-time order. In instant mode the server's
test clock is advanced to each event time (which drives cron catch-up on the
server); accelerated and realtime modes sleep instead.

The transcript is JSONL: request/response pairs, notes, the ref->id mapping,
and a final snapshot (outbox, executions, responses, profiles with history,
stream points) that `sim verify` evaluates assertions against. Edge-profile
values are written to a local state file next to the transcript and are never
sent to the server.
"""

from __future__ import annotations

import json
import logging
import time
from datetime import datetime
from pathlib import Path

from ..util import iso, parse_ts
from .client import ScenarioAborted, TranscriptClient
from .generators import generate_points
from .scenario import load_scenario

logger = logging.getLogger(__name__)

TZ_KEY_SPEC = {
    "value_type": "text", "storage": "cloud",
    "visible_to_participant": True,
    "writable_by": ["participant", "recruiter", "service"],
}


class Runner:
    def __init__(self, scenario: dict, server_url: str, admin_secret: str,
                 speed: str = "instant", seed: int | None = None):
        self.scenario = scenario
        self.speed = speed
        self.seed = scenario.get("seed", 0) if seed is None else seed
        self.transcript: list[dict] = []
        self.client = TranscriptClient(server_url, self.transcript)
        self.client.register_actor("admin", admin_secret)
        self.refs: dict[str, str] = {}
        self.study_id: str | None = None
        self.edge_state: dict[str, dict] = {}
        self.links: dict[str, str] = {}
        self._last_batch: dict[str, dict] = {}
        self._wall_anchor: float | None = None
        self._sim_anchor: datetime | None = None

    # -- time --------------------------------------------------------------

    def _advance(self, at: datetime) -> None:
        if self.client.sim_now is not None and at <= self.client.sim_now:
            return
        if self.speed == "instant":
            self.client.request("admin", "POST", "/test/clock",
                                body={"set": iso(at)}, record=False)
        else:
            factor = 1.0
            if self.speed.startswith("accelerated"):
                factor = float(self.speed.split(":", 1)[1]) if ":" in self.speed else 60.0
            if self._wall_anchor is None:
                self._wall_anchor = time.monotonic()
                self._sim_anchor = at
            else:
                target = self._wall_anchor + (at - self._sim_anchor).total_seconds() / factor
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        self.client.sim_now = at

    # -- setup --------------------------------------------------------------

    def setup(self) -> None:
        doc = self.scenario
        start = parse_ts(doc["start"])
        self._advance(start)
        study = doc["study"]

        created = self.client.request("admin", "POST", "/studies", body={
            "name": study.get("name", doc["name"]),
            "groups": study["groups"],
            "locale": study.get("locale", "en-US"),
            "timezone": study.get("timezone", "UTC"),
            "study_id": study.get("study_id"),
        })
        self.study_id = created["study_id"]
        self.client.request("admin", "POST", f"/studies/{self.study_id}/status",
                            body={"status": study.get("status", "active")})

        schema_keys = dict(study.get("profile_schema", {}) or {})
        if any(p.get("tz") for p in doc.get("participants", []) or []):
            schema_keys.setdefault("tz", TZ_KEY_SPEC)
        if schema_keys:
            self.client.request("admin", "PUT",
                                f"/studies/{self.study_id}/profile-schema",
                                body={"keys": schema_keys})

        for stream in study.get("streams", []) or []:
            self.client.request("admin", "POST", f"/studies/{self.study_id}/streams",
                                body={"name": stream["name"],
                                      "value_schema": stream["schema"],
                                      "sensitive": stream.get("sensitive", False)})

        if study.get("templates"):
            self.client.request("admin", "PUT", f"/studies/{self.study_id}/templates",
                                body={"templates": study["templates"]})

        for iid, definition in (study.get("interactions") or {}).items():
            definition = self._inline(definition)
            self.client.request("admin", "PUT",
                                f"/studies/{self.study_id}/interactions/{iid}",
                                body=definition)

        for rid, rule in (study.get("rules") or {}).items():
            rule = self._inline(rule)
            self.client.request("admin", "PUT",
                                f"/studies/{self.study_id}/rules/{rid}", body=rule)

        for person in study.get("researchers", []) or []:
            kind = "service" if person["role"] == "service" else "researcher"
            created = self.client.request("admin", "POST", "/principals", body={
                "kind": kind,
                "grants": [{"study_id": self.study_id, "role": person["role"]}],
            })
            self.refs[person["ref"]] = created["principal_id"]
            self.client.register_actor(person["ref"], created["secret"])

        for p in doc.get("participants", []) or []:
            enrolled = self.client.request(
                "admin", "POST", f"/studies/{self.study_id}/participants",
                body={"requested_id": p["ref"], "group": p.get("group")},
            )
            pid = enrolled["anonymous_id"]
            self.refs[p["ref"]] = pid
            self.client.register_actor(p["ref"], enrolled["secret"])
            if p.get("tz"):
                self.client.request(p["ref"], "PUT",
                                    f"/participants/{pid}/profile/tz",
                                    body={"value": p["tz"]})
            for key, value in (p.get("profile") or {}).items():
                self.client.request(p["ref"], "PUT",
                                    f"/participants/{pid}/profile/{key}",
                                    body={"value": value})
            if p.get("edge_values"):
                self.edge_state[p["ref"]] = dict(p["edge_values"])

    def _inline(self, doc):
        """Resolve {file: path} indirection relative to the scenario file."""
        if isinstance(doc, dict) and set(doc) == {"file"}:
            import yaml

            base = Path(self.scenario.get("_path", ".")).parent
            return yaml.safe_load((base / doc["file"]).read_text())
        return doc

    # -- timeline ----------------------------------------------------------------

    def build_timeline(self) -> list[tuple[datetime, str, dict]]:
        doc = self.scenario
        start, end = parse_ts(doc["start"]), parse_ts(doc["end"])
        timeline: list[tuple[datetime, str, dict]] = []
        for p in doc.get("participants", []) or []:
            for gi, gen in enumerate(p.get("generators", []) or []):
                seed_key = f"{self.seed}|{p['ref']}|{gi}"
                for ts, value in generate_points(gen, start, end, seed_key):
                    timeline.append((ts, p["ref"], {
                        "do": "ingest", "stream": gen["stream"],
                        "values": {gen.get("field", "value"): round(value, 6)},
                    }))
            for event in p.get("events", []) or []:
                timeline.append((parse_ts(event["at"]), p["ref"], event))
        for event in doc.get("events", []) or []:
            timeline.append((parse_ts(event["at"]), "__study__", event))
        timeline.sort(key=lambda item: item[0])
        return timeline

    # -- event dispatch -------------------------------------------------------------

    def run_event(self, at: datetime, actor: str, event: dict) -> None:
        do = event["do"]
        expect = event.get("expect_status", 200)
        if isinstance(expect, list):
            expect = tuple(expect)
        if do == "ingest":
            pid = self.refs[actor]
            point = {
                "stream": event["stream"],
                "timestamp": event.get("timestamp", iso(at)),
                "values": event["values"],
            }
            batch = {"participant": pid, "points": [point]}
            self._last_batch[actor] = batch
            self.client.request(actor, "POST", "/ingest", body=batch, expect=expect)
        elif do == "redeliver":
            batch = self._last_batch.get(actor)
            if batch is None:
                raise ScenarioAborted(f"{actor}: nothing to redeliver", self.transcript)
            self.client.request(actor, "POST", "/ingest", body=batch, expect=expect)
        elif do == "respond":
            self.client.request(
                actor, "POST",
                f"/participants/me/interactions/{event['interaction']}/responses",
                body={"answers": event.get("answers", {}),
                      "meta": event.get("meta"),
                      "started_at": event.get("started_at")},
                expect=expect,
            )
        elif do == "set_profile":
            pid = self.refs[actor]
            self.client.request(actor, "PUT",
                                f"/participants/{pid}/profile/{event['key']}",
                                body={"value": event["value"],
                                      "expected_version": event.get("expected_version")},
                                expect=expect)
        elif do == "set_settings":
            pid = self.refs[actor]
            self.client.request(actor, "PUT", f"/participants/{pid}/settings",
                                body={"sensitive_optout": event.get("sensitive_optout", False)},
                                expect=expect)
        elif do == "link_connector":
            pid = self.refs[actor]
            created = self.client.request(actor, "POST", "/connectors", body={
                "participant": pid, "vendor": event["vendor"],
                "connector_id": event.get("connector_id"),
            }, expect=expect)
            self.links[event.get("ref", event["vendor"])] = created["connector_id"]
        elif do == "sync_connector":
            cid = self.links.get(event.get("connector"), event.get("connector"))
            self.client.request(actor, "POST", f"/connectors/{cid}/sync",
                                body={}, expect=expect)
        elif do == "seed_connector":
            cid = self.links.get(event.get("connector"), event.get("connector"))
            self.client.request("admin", "POST", f"/connectors/{cid}/upstream",
                                body={"rows": event["rows"]}, expect=expect)
        elif do == "sync_connector_as":
            cid = self.links.get(event.get("connector"), event.get("connector"))
            self.client.request(event.get("as", "admin"), "POST",
                                f"/connectors/{cid}/sync", body={}, expect=expect)
        elif do == "sdk_invoke":
            body = {
                "study_id": self.study_id,
                "actions": self._resolve_refs(event["actions"]),
                "idempotency_key": event.get("idempotency_key"),
            }
            if event.get("participant"):
                body["participant"] = self.refs[event["participant"]]
            self.client.request(event.get("as", "admin"), "POST", "/sdk/invoke",
                                body=body, expect=expect)
        elif do == "set_profile_as":
            pid = self.refs[event["participant"]]
            self.client.request(event["as"], "PUT",
                                f"/participants/{pid}/profile/{event['key']}",
                                body={"value": event["value"]}, expect=expect)
        elif do == "set_group_profile":
            self.client.request(
                event.get("as", "admin"), "PUT",
                f"/studies/{self.study_id}/groups/{event['group']}/profile/{event['key']}",
                body={"value": event["value"]}, expect=expect)
        elif do == "annotate":
            self.client.request(event["as"], "POST",
                                f"/studies/{self.study_id}/annotations",
                                body={"participant": self.refs[event["participant"]],
                                      "stream_suffix": event["stream_suffix"],
                                      "timestamp": event.get("timestamp", iso(at)),
                                      "values": event["values"]},
                                expect=expect)
        elif do == "notify":
            self.client.request(event["as"], "POST",
                                f"/studies/{self.study_id}/notifications",
                                body={"participants": [self.refs[r] for r in event["participants"]],
                                      "title": event.get("title", ""),
                                      "body": event.get("body", "")},
                                expect=expect)
        elif do == "create_link":
            created = self.client.request(
                event.get("as", "admin"), "POST",
                f"/studies/{self.study_id}/recruitment-links",
                body={"group": event["group"], "max_uses": event.get("max_uses"),
                      "expires_at": event.get("expires_at")},
                expect=expect)
            self.links[event["ref"]] = created["link_id"]
        elif do == "enroll_anonymous":
            link = self.links.get(event.get("link"), event.get("link"))
            enrolled = self.client.request(None, "POST", f"/signup/{link}",
                                           body={"email": event["email"]},
                                           expect=expect)
            if "anonymous_id" in enrolled:
                self.refs[event["ref"]] = enrolled["anonymous_id"]
                self.client.register_actor(event["ref"], enrolled["secret"])
        elif do == "note":
            self.transcript.append({"kind": "note", "note": event.get("note", "")})
        else:
            raise ScenarioAborted(f"unknown event {do!r}", self.transcript)

    def _resolve_refs(self, node):
        """Replace "@ref:x" strings with the mapped server-side id."""
        if isinstance(node, str) and node.startswith("@ref:"):
            return self.refs[node[len("@ref:"):]]
        if isinstance(node, dict):
            return {k: self._resolve_refs(v) for k, v in node.items()}
        if isinstance(node, list):
            return [self._resolve_refs(v) for v in node]
        return node

    # -- snapshot ------------------------------------------------------------------

    def snapshot(self) -> None:
        sid = self.study_id
        outbox = self.client.request("admin", "GET", f"/studies/{sid}/outbox")
        self.transcript.append({"kind": "snapshot", "name": "outbox",
                                "data": outbox["outbox"]})
        execs = self.client.request("admin", "GET", "/executions",
                                    query={"study": sid})
        self.transcript.append({"kind": "snapshot", "name": "executions",
                                "data": execs["executions"]})
        responses = self.client.request("admin", "GET", f"/studies/{sid}/responses")
        self.transcript.append({"kind": "snapshot", "name": "responses",
                                "data": responses["responses"]})

        schema = self.client.request("admin", "GET", f"/studies/{sid}/profile-schema")
        cloud_keys = [k for k, s in schema["keys"].items() if s["storage"] == "cloud"]
        profiles = {}
        for p in self.scenario.get("participants", []) or []:
            pid = self.refs[p["ref"]]
            histories = {}
            for key in cloud_keys:
                h = self.client.request(
                    "admin", "GET", f"/participants/{pid}/profile/{key}/history")
                histories[key] = h["history"]
            profiles[pid] = histories
        self.transcript.append({"kind": "snapshot", "name": "profiles",
                                "data": profiles})

        streams = self.client.request("admin", "GET", f"/studies/{sid}/streams")
        points = {}
        for stream in streams["streams"]:
            rows = self.client.request(
                "admin", "GET",
                f"/studies/{sid}/streams/{stream['stream_name']}/points")
            points[stream["stream_name"]] = rows["rows"]
        self.transcript.append({"kind": "snapshot", "name": "points", "data": points})

    # -- entry -------------------------------------------------------------------

    def run(self) -> dict:
        started_wall = time.monotonic()
        self.setup()
        timeline = self.build_timeline()
        for at, actor, event in timeline:
            self._advance(at)
            if actor == "__study__":
                self.run_event(at, event.get("as", "admin"), event)
            else:
                self.run_event(at, actor, event)
        self._advance(parse_ts(self.scenario["end"]))
        self.transcript.append({"kind": "mapping", "study_id": self.study_id,
                                "refs": self.refs})
        self.snapshot()
        return {
            "name": self.scenario["name"],
            "study_id": self.study_id,
            "events": len(timeline),
            "requests": sum(1 for r in self.transcript if r.get("kind") == "request"),
            "wall_seconds": round(time.monotonic() - started_wall, 3),
        }


def run_scenario(scenario_path: str | Path, server_url: str, admin_secret: str,
                 speed: str = "instant", seed: int | None = None,
                 out_path: str | Path | None = None) -> dict:
    """Run a scenario file; writes the transcript (and local edge state) and
    returns a run summary. The transcript is flushed even when a non-scripted
    server error aborts the run."""
    scenario = load_scenario(scenario_path)
    runner = Runner(scenario, server_url, admin_secret, speed=speed, seed=seed)
    out = Path(out_path) if out_path else Path(f"{scenario['name']}.transcript.jsonl")
    try:
        summary = runner.run()
    except ScenarioAborted as exc:
        _flush(out, runner)
        raise
    summary["transcript"] = str(out)
    _flush(out, runner)
    return summary


def _flush(out: Path, runner: Runner) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        for record in runner.transcript:
            fh.write(json.dumps(record) + "\n")
    state_path = out.with_suffix(out.suffix + ".state.json")
    state_path.write_text(json.dumps({"edge_values": runner.edge_state}, indent=1))
