"""Scenario file loading and validation.

A scenario is YAML with three sections:

  name / seed / start / end    timeline bounds (UTC instants)
  study                        setup performed through the management API:
                               groups, streams, profile_schema, templates,
                               interactions, rules, researchers, and service
                               principals (by ref)
  participants                 list of {ref, group, tz, profile, edge_values,
                               generators, events}
  events                       study-level scripted events performed by
                               researchers or service principals

Every event has {at, do, ...}; event times must be non-decreasing per actor.
References (participant refs, researcher refs) are symbolic; the runner maps
them to real server-side ids and records the mapping in the transcript.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from ..util import parse_ts

PARTICIPANT_EVENT_KINDS = {
    "ingest", "redeliver", "respond", "set_profile", "set_settings",
    "link_connector", "sync_connector",
}
STUDY_EVENT_KINDS = {
    "sdk_invoke", "set_profile_as", "annotate", "notify", "enroll_anonymous",
    "seed_connector", "sync_connector_as", "note", "create_link", "set_group_profile",
}


class ScenarioError(ValueError):
    pass


def load_scenario(path: str | Path) -> dict:
    doc = yaml.safe_load(Path(path).read_text())
    errors = validate_scenario(doc)
    if errors:
        raise ScenarioError("; ".join(errors))
    doc["_path"] = str(path)
    return doc


def validate_scenario(doc) -> list[str]:
    errors: list[str] = []
    if not isinstance(doc, dict):
        return ["scenario must be a mapping"]
    if not doc.get("name"):
        errors.append("name is required")
    for field in ("start", "end"):
        try:
            parse_ts(doc.get(field, ""))
        except (ValueError, TypeError):
            errors.append(f"{field} must be a UTC timestamp")

    study = doc.get("study")
    if not isinstance(study, dict):
        errors.append("study section is required")
        study = {}
    if not study.get("groups"):
        errors.append("study.groups is required")
    for r in study.get("researchers", []) or []:
        if not r.get("ref") or not r.get("role"):
            errors.append("each researcher needs ref and role")

    refs = set()
    participants = doc.get("participants", []) or []
    for i, p in enumerate(participants):
        if not isinstance(p, dict) or not p.get("ref"):
            errors.append(f"participants[{i}] needs a ref")
            continue
        if p["ref"] in refs:
            errors.append(f"duplicate participant ref {p['ref']!r}")
        refs.add(p["ref"])
        last = None
        for j, event in enumerate(p.get("events", []) or []):
            where = f"participants[{i}].events[{j}]"
            kind = event.get("do")
            if kind not in PARTICIPANT_EVENT_KINDS:
                errors.append(f"{where}: unknown event {kind!r}")
            try:
                at = parse_ts(event.get("at", ""))
            except (ValueError, TypeError):
                errors.append(f"{where}: bad time")
                continue
            if last is not None and at < last:
                errors.append(f"{where}: event times must be non-decreasing")
            last = at

    last = None
    for j, event in enumerate(doc.get("events", []) or []):
        where = f"events[{j}]"
        kind = event.get("do")
        if kind not in STUDY_EVENT_KINDS:
            errors.append(f"{where}: unknown event {kind!r}")
        try:
            at = parse_ts(event.get("at", ""))
        except (ValueError, TypeError):
            errors.append(f"{where}: bad time")
            continue
        if last is not None and at < last:
            errors.append(f"{where}: event times must be non-decreasing")
        last = at

    return errors
