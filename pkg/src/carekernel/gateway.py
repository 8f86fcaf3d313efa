"""Gateway: authentication, study-scoped authorization, identity vault.

The two-step front door: a bearer token is first resolved to a principal,
then the requested permission is checked against the role-permission matrix
for the study in scope. Participant emails live only in the vault table;
every other surface of the system sees the participant's anonymous id.

Secrets and tokens are stored as salted SHA-256 hashes; plaintext secrets
appear exactly once, in the response of the call that created them.
"""

from __future__ import annotations

import hashlib
import secrets as pysecrets
from dataclasses import dataclass, field
from datetime import timedelta

from .errors import (
    AccountDisabled,
    AlreadyEnrolled,
    AuthenticationFailure,
    AuthorizationFailure,
    BadRequest,
    IdTaken,
    NotFound,
    RecruitmentClosed,
)
from .permissions import PermissionMatrix, ROLES
from .storage import Storage
from .util import iso, new_secret, parse_ts, random_id

RESEARCHER_ROLES = {"admin", "study_manager", "recruiter", "data_analyst", "clinician"}
GLOBAL_SCOPE = "*"

DEFAULT_TOKEN_LIFETIME_HOURS = 24


def _hash_secret(secret: str, salt: str) -> str:
    return hashlib.sha256((salt + secret).encode("utf-8")).hexdigest()


def _hash_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


@dataclass
class AuthContext:
    """Resolved identity attached to a request after token verification."""

    principal_id: str
    kind: str
    scope: dict[str, str] = field(default_factory=dict)  # study_id -> role

    def role_for(self, study_id: str) -> str | None:
        return self.scope.get(study_id) or self.scope.get(GLOBAL_SCOPE)

    def is_participant(self) -> bool:
        return self.kind == "participant"


class Gateway:
    def __init__(self, storage: Storage, clock, matrix: PermissionMatrix,
                 token_lifetime_hours: float = DEFAULT_TOKEN_LIFETIME_HOURS):
        self.storage = storage
        self.clock = clock
        self.matrix = matrix
        self.token_lifetime = timedelta(hours=token_lifetime_hours)

    # -- principals ------------------------------------------------------

    def create_principal(self, kind: str, grants: list[dict],
                         principal_id: str | None = None) -> dict:
        """Create a researcher or service principal with its grants.

        Participant principals are only created through enrollment.
        """
        if kind not in ("researcher", "service"):
            raise BadRequest(f"cannot create principal of kind {kind!r}")
        for g in grants:
            role = g.get("role")
            if role == "participant":
                raise BadRequest("participant role is reserved for participant principals")
            if role not in ROLES and role != "service":
                raise BadRequest(f"unknown role {role!r}")
            if kind == "service" and role != "service":
                raise BadRequest("service principals may only hold the service role")
            if kind == "researcher" and role == "service":
                raise BadRequest("researcher principals may not hold the service role")
        pid = principal_id or f"{kind[0]}-{random_id(10)}"
        secret = new_secret()
        salt = pysecrets.token_hex(8)
        with self.storage.tx():
            if self.storage.query_one(
                "SELECT 1 FROM principals WHERE principal_id = ?", (pid,)
            ):
                raise IdTaken(f"principal {pid} exists")
            self.storage.execute(
                "INSERT INTO principals (principal_id, kind, credential_hash, salt, "
                "disabled, created_at) VALUES (?, ?, ?, ?, 0, ?)",
                (pid, kind, _hash_secret(secret, salt), salt, iso(self.clock.now())),
            )
            for g in grants:
                self.storage.execute(
                    "INSERT OR REPLACE INTO grants (principal_id, study_id, role) "
                    "VALUES (?, ?, ?)",
                    (pid, g.get("study_id", GLOBAL_SCOPE), g["role"]),
                )
        return {"principal_id": pid, "secret": secret}

    def ensure_bootstrap_admin(self, secret: str) -> str:
        """Create (once) the root admin with a caller-supplied secret."""
        with self.storage.tx():
            row = self.storage.query_one(
                "SELECT principal_id, salt FROM principals WHERE principal_id = 'root'"
            )
            if row is not None:
                return "root"
            salt = pysecrets.token_hex(8)
            self.storage.execute(
                "INSERT INTO principals (principal_id, kind, credential_hash, salt, "
                "disabled, created_at) VALUES ('root', 'researcher', ?, ?, 0, ?)",
                (_hash_secret(secret, salt), salt, iso(self.clock.now())),
            )
            self.storage.execute(
                "INSERT INTO grants (principal_id, study_id, role) VALUES ('root', ?, 'admin')",
                (GLOBAL_SCOPE,),
            )
        return "root"

    def _grants_of(self, principal_id: str) -> dict[str, str]:
        rows = self.storage.query(
            "SELECT study_id, role FROM grants WHERE principal_id = ?", (principal_id,)
        )
        return {r["study_id"]: r["role"] for r in rows}

    # -- authentication ----------------------------------------------------

    def authenticate(self, credential: str) -> dict:
        """Exchange a principal secret for a fresh bearer token."""
        if not credential or not isinstance(credential, str):
            raise AuthenticationFailure("missing credential")
        rows = self.storage.query(
            "SELECT principal_id, kind, credential_hash, salt, disabled FROM principals"
        )
        matched = None
        for row in rows:
            if pysecrets.compare_digest(
                _hash_secret(credential, row["salt"]), row["credential_hash"]
            ):
                matched = row
                break
        if matched is None:
            raise AuthenticationFailure("unknown credential")
        if matched["disabled"]:
            raise AccountDisabled(f"principal {matched['principal_id']} is disabled")
        token = new_secret()
        scope = self._grants_of(matched["principal_id"])
        expires_at = self.clock.now() + self.token_lifetime
        with self.storage.tx():
            self.storage.execute(
                "INSERT INTO tokens (token_hash, principal_id, expires_at, scope_json) "
                "VALUES (?, ?, ?, ?)",
                (
                    _hash_token(token),
                    matched["principal_id"],
                    iso(expires_at),
                    _scope_json(scope),
                ),
            )
        return {
            "token": token,
            "principal_id": matched["principal_id"],
            "kind": matched["kind"],
            "expires_at": iso(expires_at),
            "scope": [{"study_id": s, "role": r} for s, r in sorted(scope.items())],
        }

    def resolve_token(self, token: str) -> AuthContext:
        """Verify a bearer token; expired or unknown tokens authorize nothing."""
        if not token:
            raise AuthorizationFailure("missing bearer token")
        row = self.storage.query_one(
            "SELECT t.principal_id, t.expires_at, t.scope_json, p.kind, p.disabled "
            "FROM tokens t JOIN principals p ON p.principal_id = t.principal_id "
            "WHERE t.token_hash = ?",
            (_hash_token(token),),
        )
        if row is None:
            raise AuthorizationFailure("unknown token")
        if parse_ts(row["expires_at"]) <= self.clock.now():
            raise AuthorizationFailure("token expired")
        if row["disabled"]:
            raise AccountDisabled("principal disabled")
        return AuthContext(
            principal_id=row["principal_id"],
            kind=row["kind"],
            scope=_scope_from_json(row["scope_json"]),
        )

    def authorize(self, ctx: AuthContext, permission: str, study_id: str) -> None:
        """Allow or deny by matrix lookup; deny names the missing permission."""
        role = ctx.role_for(study_id)
        if role is None or not self.matrix.allows(role, permission):
            raise AuthorizationFailure(
                f"permission {permission!r} denied for study {study_id!r}",
                permission=permission,
                study_id=study_id,
            )

    def check(self, ctx: AuthContext, permission: str, study_id: str) -> bool:
        try:
            self.authorize(ctx, permission, study_id)
            return True
        except AuthorizationFailure:
            return False

    # -- enrollment -------------------------------------------------------

    def enroll_anonymous(self, signup_token: str, email: str) -> dict:
        """Enroll through a recruitment link; only the vault learns the email."""
        if not email or "@" not in email:
            raise BadRequest("an email address is required")
        now = self.clock.now()
        with self.storage.tx():
            link = self.storage.query_one(
                "SELECT link_id, study_id, group_id, max_uses, uses, expires_at "
                "FROM recruitment_links WHERE link_id = ?",
                (signup_token,),
            )
            if link is None:
                raise RecruitmentClosed("unknown recruitment link")
            if link["expires_at"] is not None and parse_ts(link["expires_at"]) <= now:
                raise RecruitmentClosed("recruitment link expired")
            if link["max_uses"] is not None and link["uses"] >= link["max_uses"]:
                raise RecruitmentClosed("recruitment link exhausted")
            study = self.storage.query_one(
                "SELECT status FROM studies WHERE study_id = ?", (link["study_id"],)
            )
            if study is None or study["status"] == "closed":
                raise RecruitmentClosed("study closed")
            dup = self.storage.query_one(
                "SELECT 1 FROM vault WHERE study_id = ? AND email = ?",
                (link["study_id"], email),
            )
            if dup is not None:
                raise AlreadyEnrolled("email already enrolled in this study")
            result = self._create_participant(link["study_id"], link["group_id"], None)
            self.storage.execute(
                "INSERT INTO vault (study_id, anonymous_id, email) VALUES (?, ?, ?)",
                (link["study_id"], result["anonymous_id"], email),
            )
            self.storage.execute(
                "UPDATE recruitment_links SET uses = uses + 1 WHERE link_id = ?",
                (signup_token,),
            )
        return result

    def enroll_direct(self, study_id: str, group_id: str | None = None,
                      requested_id: str | None = None) -> dict:
        """Direct recruitment: server-generated random id, no vault entry."""
        with self.storage.tx():
            study = self.storage.query_one(
                "SELECT status FROM studies WHERE study_id = ?", (study_id,)
            )
            if study is None:
                raise NotFound(f"study {study_id}")
            if study["status"] == "closed":
                raise RecruitmentClosed("study closed")
            if group_id is None:
                row = self.storage.query_one(
                    "SELECT group_id FROM study_groups WHERE study_id = ? "
                    "ORDER BY group_id LIMIT 1",
                    (study_id,),
                )
                if row is None:
                    raise BadRequest("study has no groups")
                group_id = row["group_id"]
            else:
                row = self.storage.query_one(
                    "SELECT 1 FROM study_groups WHERE study_id = ? AND group_id = ?",
                    (study_id, group_id),
                )
                if row is None:
                    raise NotFound(f"group {group_id}")
            return self._create_participant(study_id, group_id, requested_id)

    def _create_participant(self, study_id: str, group_id: str,
                            requested_id: str | None) -> dict:
        if requested_id is not None:
            if self.storage.query_one(
                "SELECT 1 FROM principals WHERE principal_id = ?", (requested_id,)
            ):
                raise IdTaken(f"id {requested_id} is taken")
            anon = requested_id
        else:
            anon = random_id(12)
            while self.storage.query_one(
                "SELECT 1 FROM principals WHERE principal_id = ?", (anon,)
            ):
                anon = random_id(12)
        secret = new_secret()
        salt = pysecrets.token_hex(8)
        now = iso(self.clock.now())
        self.storage.execute(
            "INSERT INTO principals (principal_id, kind, credential_hash, salt, "
            "disabled, created_at) VALUES (?, 'participant', ?, ?, 0, ?)",
            (anon, _hash_secret(secret, salt), salt, now),
        )
        self.storage.execute(
            "INSERT INTO grants (principal_id, study_id, role) VALUES (?, ?, 'participant')",
            (anon, study_id),
        )
        self.storage.execute(
            "INSERT INTO participants (participant_id, study_id, group_id, "
            "sensitive_optout, created_at) VALUES (?, ?, ?, 0, ?)",
            (anon, study_id, group_id, now),
        )
        return {"anonymous_id": anon, "secret": secret, "study_id": study_id,
                "group_id": group_id}

    # -- participant helpers ------------------------------------------------

    def participant_record(self, participant_id: str):
        return self.storage.query_one(
            "SELECT participant_id, study_id, group_id, sensitive_optout "
            "FROM participants WHERE participant_id = ?",
            (participant_id,),
        )

    def set_sensitive_optout(self, participant_id: str, optout: bool) -> None:
        with self.storage.tx():
            cur = self.storage.execute(
                "UPDATE participants SET sensitive_optout = ? WHERE participant_id = ?",
                (1 if optout else 0, participant_id),
            )
            if cur.rowcount == 0:
                raise NotFound(f"participant {participant_id}")

    def set_disabled(self, principal_id: str, disabled: bool) -> None:
        with self.storage.tx():
            cur = self.storage.execute(
                "UPDATE principals SET disabled = ? WHERE principal_id = ?",
                (1 if disabled else 0, principal_id),
            )
            if cur.rowcount == 0:
                raise NotFound(f"principal {principal_id}")


def _scope_json(scope: dict[str, str]) -> str:
    import json

    return json.dumps(sorted(scope.items()))


def _scope_from_json(text: str) -> dict[str, str]:
    import json

    return {study: role for study, role in json.loads(text)}
