"""Declarative transcript assertions.

An assertions file is YAML: {assertions: [{kind: ..., ...}, ...]}. Each
assertion evaluates against the transcript's final snapshot (outbox,
executions, responses, profile histories, points) or against the recorded
response bodies; participants may be named by their scenario ref, resolved
through the transcript's mapping record. The result lists every failure;
missing targets are explicit failures naming the missing key.
"""

from __future__ import annotations

import json
from datetime import timezone
from pathlib import Path

import yaml

from ..util import load_zone, parse_ts


class AssertionSyntaxError(ValueError):
    pass


def load_transcript(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def _index(records: list[dict]) -> dict:
    snapshots = {}
    mapping: dict = {}
    responses_text = []
    for r in records:
        if r.get("kind") == "snapshot":
            snapshots[r["name"]] = r["data"]
        elif r.get("kind") == "mapping":
            mapping = r
        elif r.get("kind") == "response":
            responses_text.append(json.dumps(r.get("body", {})))
    return {
        "snapshots": snapshots,
        "refs": mapping.get("refs", {}),
        "study_id": mapping.get("study_id"),
        "responses_text": "\n".join(responses_text),
    }


def verify_transcript(transcript_path: str | Path,
                      assertions_path: str | Path) -> list[str]:
    """Evaluate every assertion; returns failure messages (empty = pass)."""
    doc = yaml.safe_load(Path(assertions_path).read_text())
    if not isinstance(doc, dict) or not isinstance(doc.get("assertions"), list):
        raise AssertionSyntaxError("assertions file must contain an 'assertions' list")
    data = _index(load_transcript(transcript_path))
    failures: list[str] = []
    for i, assertion in enumerate(doc["assertions"]):
        if not isinstance(assertion, dict) or "kind" not in assertion:
            raise AssertionSyntaxError(f"assertions[{i}] must have a kind")
        try:
            problem = _evaluate(assertion, data)
        except AssertionSyntaxError:
            raise
        except KeyError as exc:
            problem = f"missing key {exc}"
        if problem:
            failures.append(f"assertions[{i}] ({assertion['kind']}): {problem}")
    return failures


def _resolve(ref: str | None, data: dict) -> str | None:
    if ref is None:
        return None
    return data["refs"].get(ref, ref)


def _compare(assertion: dict, actual, what: str) -> str | None:
    if "equals" in assertion and actual != assertion["equals"]:
        return f"{what} is {actual!r}, expected {assertion['equals']!r}"
    if "min" in assertion and actual < assertion["min"]:
        return f"{what} is {actual!r}, expected >= {assertion['min']!r}"
    if "max" in assertion and actual > assertion["max"]:
        return f"{what} is {actual!r}, expected <= {assertion['max']!r}"
    if not any(k in assertion for k in ("equals", "min", "max")):
        raise AssertionSyntaxError(f"{what}: needs equals, min, or max")
    return None


def _evaluate(assertion: dict, data: dict) -> str | None:
    kind = assertion["kind"]
    snapshots = data["snapshots"]

    if kind == "outbox_count":
        rows = snapshots.get("outbox")
        if rows is None:
            return "transcript has no outbox snapshot"
        participant = _resolve(assertion.get("participant"), data)
        recipient = assertion.get("recipient")
        if recipient and recipient.startswith("principal:"):
            recipient = "principal:" + _resolve(recipient.split(":", 1)[1], data)
        matched = [
            r for r in rows
            if (assertion.get("channel") is None or r["channel"] == assertion["channel"])
            and (assertion.get("rule") is None or r["rule_id"] == assertion["rule"])
            and (participant is None or r["participant"] == participant)
            and (recipient is None or r["recipient"] == recipient)
            and (assertion.get("title_contains") is None
                 or assertion["title_contains"] in (r.get("title") or ""))
        ]
        return _compare(assertion, len(matched), "outbox count")

    if kind == "push_count_by_day":
        rows = snapshots.get("outbox")
        if rows is None:
            return "transcript has no outbox snapshot"
        tz = load_zone(assertion.get("tz")) or timezone.utc
        counts: dict[str, dict[str, int]] = {}
        for r in rows:
            if r["channel"] != assertion.get("channel", "push"):
                continue
            if assertion.get("rule") is not None and r["rule_id"] != assertion["rule"]:
                continue
            day = parse_ts(r["created_at"]).astimezone(tz).date().isoformat()
            pid = r["participant"]
            counts.setdefault(pid, {}).setdefault(day, 0)
            counts[pid][day] += 1
        expect = {
            _resolve(ref, data): days for ref, days in assertion["expect"].items()
        }
        if counts != expect:
            return f"per-day counts {counts!r} != expected {expect!r}"
        return None

    if kind == "profile_versions":
        profiles = snapshots.get("profiles")
        if profiles is None:
            return "transcript has no profiles snapshot"
        pid = _resolve(assertion["participant"], data)
        if pid not in profiles:
            return f"no profile snapshot for participant {assertion['participant']!r}"
        key = assertion["key"]
        if key not in profiles[pid]:
            return f"profile key {key!r} missing from snapshot"
        versions = [h["version"] for h in profiles[pid][key]]
        return _compare(assertion, versions, f"versions of {key!r}")

    if kind == "profile_value":
        profiles = snapshots.get("profiles")
        if profiles is None:
            return "transcript has no profiles snapshot"
        pid = _resolve(assertion["participant"], data)
        key = assertion["key"]
        history = profiles.get(pid, {}).get(key)
        if history is None:
            return f"profile key {key!r} missing from snapshot"
        if not history:
            return f"profile key {key!r} has no value"
        return _compare(assertion, history[-1]["value"], f"value of {key!r}")

    if kind == "execution_count":
        rows = snapshots.get("executions")
        if rows is None:
            return "transcript has no executions snapshot"
        participant = _resolve(assertion.get("participant"), data)
        matched = [
            r for r in rows
            if (assertion.get("rule") is None or r["rule_id"] == assertion["rule"])
            and (assertion.get("status") is None or r["status"] == assertion["status"])
            and (participant is None or r["participant"] == participant)
        ]
        return _compare(assertion, len(matched), "execution count")

    if kind == "response_count":
        rows = snapshots.get("responses")
        if rows is None:
            return "transcript has no responses snapshot"
        participant = _resolve(assertion.get("participant"), data)
        matched = [
            r for r in rows
            if (assertion.get("interaction") is None
                or r["interaction_id"] == assertion["interaction"])
            and (participant is None or r["participant"] == participant)
        ]
        return _compare(assertion, len(matched), "response count")

    if kind == "point_count":
        points = snapshots.get("points")
        if points is None:
            return "transcript has no points snapshot"
        stream = assertion["stream"]
        if stream not in points:
            return f"stream {stream!r} missing from snapshot"
        participant = _resolve(assertion.get("participant"), data)
        rows = [r for r in points[stream]
                if participant is None or r["participant"] == participant]
        return _compare(assertion, len(rows), f"point count of {stream!r}")

    if kind == "transcript_absent":
        text = assertion.get("text")
        if not text:
            raise AssertionSyntaxError("transcript_absent needs text")
        if text in data["responses_text"]:
            return f"text {text!r} found in a response body"
        return None

    if kind == "transcript_present":
        text = assertion.get("text")
        if not text:
            raise AssertionSyntaxError("transcript_present needs text")
        if text not in data["responses_text"]:
            return f"text {text!r} not found in any response body"
        return None

    raise AssertionSyntaxError(f"unknown assertion kind {kind!r}")
