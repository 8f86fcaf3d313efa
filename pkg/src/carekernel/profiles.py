"""Programmable key-value profiles for participants and groups.

Each study declares a schema: typed keys with a storage location (cloud or
edge), participant visibility, and the set of roles allowed to write. Edge
keys are the privacy mechanism: their values live only on the participant's
device, and the server rejects any attempt to store one. Cloud values keep
full version history with optimistic concurrency on the version number.
"""

from __future__ import annotations

import json
from typing import Any

from .errors import (
    BadRequest,
    EdgeKeyRejected,
    NotFound,
    SchemaConflict,
    StaleVersion,
    TypeMismatch,
    ValidationFailed,
)
from .storage import Storage
from .util import iso, parse_ts

VALUE_TYPES = {"number", "text", "boolean", "timestamp", "document", "attachment-ref"}
STORAGE_KINDS = {"cloud", "edge"}
WRITER_ROLES = {"admin", "study_manager", "recruiter", "data_analyst", "clinician",
                "participant", "service"}

ATTACHMENT_REF_PREFIX = "blob:sha256:"


def check_value(value_type: str, value: Any) -> bool:
    if value_type == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if value_type == "text":
        return isinstance(value, str)
    if value_type == "boolean":
        return isinstance(value, bool)
    if value_type == "timestamp":
        if not isinstance(value, str):
            return False
        try:
            parse_ts(value)
            return True
        except ValueError:
            return False
    if value_type == "document":
        return isinstance(value, (dict, list))
    if value_type == "attachment-ref":
        return isinstance(value, str) and value.startswith(ATTACHMENT_REF_PREFIX)
    return False


class ProfileService:
    def __init__(self, storage: Storage, clock):
        self.storage = storage
        self.clock = clock

    # -- schema -----------------------------------------------------------

    def define_schema(self, study_id: str, keys: dict[str, dict]) -> dict:
        """Add or update key declarations.

        New keys may be added at any time; changing the type or narrowing a
        key that already has stored values is rejected.
        """
        errors = []
        for name, spec in keys.items():
            path = f"keys.{name}"
            if not isinstance(spec, dict):
                errors.append({"path": path, "message": "declaration must be an object"})
                continue
            if spec.get("value_type") not in VALUE_TYPES:
                errors.append({"path": path, "message": f"value_type must be one of {sorted(VALUE_TYPES)}"})
            if spec.get("storage") not in STORAGE_KINDS:
                errors.append({"path": path, "message": "storage must be cloud or edge"})
            if not isinstance(spec.get("visible_to_participant"), bool):
                errors.append({"path": path, "message": "visible_to_participant must be boolean"})
            writable = spec.get("writable_by")
            if (not isinstance(writable, list) or
                    any(r not in WRITER_ROLES for r in writable)):
                errors.append({"path": path, "message": f"writable_by must be a list of roles from {sorted(WRITER_ROLES)}"})
        if errors:
            raise ValidationFailed(errors)

        with self.storage.tx():
            for name, spec in keys.items():
                existing = self.storage.query_one(
                    "SELECT value_type, storage FROM profile_schemas "
                    "WHERE study_id = ? AND key_name = ?",
                    (study_id, name),
                )
                if existing is not None and (
                    existing["value_type"] != spec["value_type"]
                    or existing["storage"] != spec["storage"]
                ):
                    has_values = self.storage.query_one(
                        "SELECT 1 FROM profile_values WHERE study_id = ? AND key_name = ? LIMIT 1",
                        (study_id, name),
                    )
                    if has_values:
                        raise SchemaConflict(
                            f"key {name!r} has stored values; type/storage cannot change"
                        )
                self.storage.execute(
                    "INSERT OR REPLACE INTO profile_schemas "
                    "(study_id, key_name, value_type, storage, visible, writable_json) "
                    "VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        study_id,
                        name,
                        spec["value_type"],
                        spec["storage"],
                        1 if spec["visible_to_participant"] else 0,
                        json.dumps(sorted(spec["writable_by"])),
                    ),
                )
        return self.get_schema(study_id)

    def get_schema(self, study_id: str) -> dict:
        rows = self.storage.query(
            "SELECT key_name, value_type, storage, visible, writable_json "
            "FROM profile_schemas WHERE study_id = ? ORDER BY key_name",
            (study_id,),
        )
        return {
            "study_id": study_id,
            "keys": {
                r["key_name"]: {
                    "value_type": r["value_type"],
                    "storage": r["storage"],
                    "visible_to_participant": bool(r["visible"]),
                    "writable_by": json.loads(r["writable_json"]),
                }
                for r in rows
            },
        }

    def _key_spec(self, study_id: str, key: str) -> dict:
        row = self.storage.query_one(
            "SELECT value_type, storage, visible, writable_json FROM profile_schemas "
            "WHERE study_id = ? AND key_name = ?",
            (study_id, key),
        )
        if row is None:
            raise NotFound(f"profile key {key!r} is not declared in study {study_id}")
        return {
            "value_type": row["value_type"],
            "storage": row["storage"],
            "visible": bool(row["visible"]),
            "writable_by": json.loads(row["writable_json"]),
        }

    # -- values -------------------------------------------------------------

    def set_value(self, study_id: str, scope: str, scope_id: str, key: str,
                  value: Any, writer_role: str, writer_id: str,
                  expected_version: int | None = None) -> int:
        """Append a new version. Optimistic concurrency via expected_version."""
        if scope not in ("participant", "group"):
            raise BadRequest("scope must be participant or group")
        spec = self._key_spec(study_id, key)
        if spec["storage"] == "edge":
            raise EdgeKeyRejected(
                f"key {key!r} is edge-stored; the server does not accept its values"
            )
        if writer_role != "admin" and writer_role not in spec["writable_by"]:
            from .errors import AuthorizationFailure

            raise AuthorizationFailure(
                f"role {writer_role!r} may not write key {key!r}",
                permission="profile.write", key=key,
            )
        if not check_value(spec["value_type"], value):
            raise TypeMismatch(
                f"value for {key!r} must be of type {spec['value_type']}"
            )
        with self.storage.tx():
            row = self.storage.query_one(
                "SELECT MAX(version) AS v FROM profile_values "
                "WHERE scope = ? AND scope_id = ? AND key_name = ?",
                (scope, scope_id, key),
            )
            current = row["v"] or 0
            if expected_version is not None and expected_version != current:
                raise StaleVersion(
                    f"expected version {expected_version}, current is {current}"
                )
            new_version = current + 1
            self.storage.execute(
                "INSERT INTO profile_values (scope, scope_id, study_id, key_name, "
                "value_json, version, updated_at, updated_by) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    scope,
                    scope_id,
                    study_id,
                    key,
                    json.dumps(value),
                    new_version,
                    iso(self.clock.now()),
                    writer_id,
                ),
            )
        return new_version

    def current_value(self, scope: str, scope_id: str, key: str):
        """(value, version) of the latest write, or (None, 0) when unset."""
        row = self.storage.query_one(
            "SELECT value_json, version FROM profile_values "
            "WHERE scope = ? AND scope_id = ? AND key_name = ? "
            "ORDER BY version DESC LIMIT 1",
            (scope, scope_id, key),
        )
        if row is None:
            return None, 0
        return json.loads(row["value_json"]), row["version"]

    def get_profile(self, study_id: str, scope: str, scope_id: str,
                    as_participant: bool) -> dict:
        """Projected view of all declared keys for one participant or group.

        Participants see only visible keys; researchers see every cloud key.
        Edge keys carry no value, only the storage marker.
        """
        schema = self.get_schema(study_id)["keys"]
        out: dict[str, dict] = {}
        for key, spec in schema.items():
            if as_participant and not spec["visible_to_participant"]:
                continue
            entry: dict[str, Any] = {"storage": spec["storage"],
                                     "value_type": spec["value_type"]}
            if spec["storage"] == "edge":
                entry["value"] = None
                entry["version"] = 0
            else:
                value, version = self.current_value(scope, scope_id, key)
                entry["value"] = value
                entry["version"] = version
            out[key] = entry
        return out

    def profile_view(self, study_id: str, participant_id: str) -> dict[str, Any]:
        """Flat key -> current value map used by expression evaluation."""
        schema = self.get_schema(study_id)["keys"]
        view: dict[str, Any] = {}
        for key, spec in schema.items():
            if spec["storage"] == "edge":
                view[key] = None
                continue
            value, _ = self.current_value("participant", participant_id, key)
            view[key] = value
        return view

    def group_value(self, group_scope_id: str, key: str):
        return self.current_value("group", group_scope_id, key)

    def history(self, scope: str, scope_id: str, key: str) -> list[dict]:
        rows = self.storage.query(
            "SELECT value_json, version, updated_at, updated_by FROM profile_values "
            "WHERE scope = ? AND scope_id = ? AND key_name = ? ORDER BY version",
            (scope, scope_id, key),
        )
        return [
            {
                "value": json.loads(r["value_json"]),
                "version": r["version"],
                "updated_at": r["updated_at"],
                "updated_by": r["updated_by"],
            }
            for r in rows
        ]

    def clone_group_profile(self, study_id: str, src_group: str, dst_group: str,
                            writer_id: str) -> int:
        """Copy current group values src -> dst; later divergence is fine."""
        schema = self.get_schema(study_id)["keys"]
        copied = 0
        with self.storage.tx():
            for key, spec in schema.items():
                if spec["storage"] == "edge":
                    continue
                value, version = self.current_value("group", _group_scope(study_id, src_group), key)
                if version == 0:
                    continue
                self.set_value(
                    study_id, "group", _group_scope(study_id, dst_group), key, value,
                    writer_role="admin", writer_id=writer_id,
                )
                copied += 1
        return copied


def _group_scope(study_id: str, group_id: str) -> str:
    """Groups are namespaced per study in the value store."""
    return f"{study_id}/{group_id}"
