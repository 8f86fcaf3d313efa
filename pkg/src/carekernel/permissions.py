"""Role-permission matrix.

The matrix ships as a versioned JSON config file: rows are permission names,
columns are roles, every cell is explicitly "allow" or "deny". authorize()
decisions are pure lookups in this table; nothing else grants access. A
malformed matrix (missing cell, unknown role, bad cell value) makes the
service refuse to boot.

Role layering encoded in the shipped file: study_manager covers everything
recruiter, data_analyst, and clinician can do; admin allows everything. The
"service" column authorizes service-kind principals (the rule engine itself
and external SDK integrations).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import ConfigError

ROLES = ["admin", "study_manager", "recruiter", "data_analyst", "clinician", "participant"]
ALL_COLUMNS = ROLES + ["service"]

DEFAULT_MATRIX_RESOURCE = "permission_matrix.json"


class PermissionMatrix:
    def __init__(self, version: int, cells: dict[str, dict[str, bool]]):
        self.version = version
        self._cells = cells

    @property
    def permissions(self) -> list[str]:
        return sorted(self._cells)

    def knows(self, permission: str) -> bool:
        return permission in self._cells

    def allows(self, role: str, permission: str) -> bool:
        row = self._cells.get(permission)
        if row is None:
            # Unknown permission names fail closed.
            return False
        return row.get(role, False)

    def as_dict(self) -> dict:
        return {
            "format": 1,
            "version": self.version,
            "roles": list(ALL_COLUMNS),
            "permissions": {
                perm: {role: ("allow" if allowed else "deny") for role, allowed in row.items()}
                for perm, row in sorted(self._cells.items())
            },
        }


def load_matrix(path: str | Path | None = None) -> PermissionMatrix:
    """Load and validate a matrix file; None loads the shipped default."""
    if path is None:
        text = resources.files("carekernel").joinpath("data", DEFAULT_MATRIX_RESOURCE).read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"permission matrix is not valid JSON: {exc}")
    return parse_matrix(doc)


def parse_matrix(doc: dict) -> PermissionMatrix:
    if not isinstance(doc, dict) or doc.get("format") != 1:
        raise ConfigError("permission matrix: missing or unsupported format field")
    version = doc.get("version")
    if not isinstance(version, int) or version < 1:
        raise ConfigError("permission matrix: version must be a positive integer")
    roles = doc.get("roles")
    if roles != ALL_COLUMNS:
        raise ConfigError(f"permission matrix: roles must be exactly {ALL_COLUMNS}")
    permissions = doc.get("permissions")
    if not isinstance(permissions, dict) or not permissions:
        raise ConfigError("permission matrix: permissions table missing or empty")
    cells: dict[str, dict[str, bool]] = {}
    for perm, row in permissions.items():
        if not isinstance(row, dict):
            raise ConfigError(f"permission matrix: row for {perm!r} is not an object")
        unknown = set(row) - set(ALL_COLUMNS)
        if unknown:
            raise ConfigError(f"permission matrix: unknown roles {sorted(unknown)} in {perm!r}")
        missing = set(ALL_COLUMNS) - set(row)
        if missing:
            raise ConfigError(f"permission matrix: missing cells {sorted(missing)} in {perm!r}")
        parsed = {}
        for role, cell in row.items():
            if cell not in ("allow", "deny"):
                raise ConfigError(
                    f"permission matrix: cell ({perm!r}, {role!r}) must be allow or deny"
                )
            parsed[role] = cell == "allow"
        cells[perm] = parsed
    return PermissionMatrix(version, cells)
