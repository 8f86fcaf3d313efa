"""Error types shared across services.

Every service error carries a stable machine-readable ``code`` that the HTTP
layer maps onto a status and a JSON envelope ``{"error": code, "message": ...}``.
"""

from __future__ import annotations

from typing import Any


class KernelError(Exception):
    """Base class for all service errors."""

    code = "internal-error"
    http_status = 500

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_dict(self) -> dict:
        doc = {"error": self.code, "message": self.message}
        if self.details:
            doc["details"] = self.details
        return doc


class ConfigError(KernelError):
    """Malformed configuration; the service refuses to start."""

    code = "config-error"


class AuthenticationFailure(KernelError):
    code = "authentication-failure"
    http_status = 401


class AccountDisabled(KernelError):
    code = "account-disabled"
    http_status = 403


class AuthorizationFailure(KernelError):
    """Deny decision; carries the missing permission name in details."""

    code = "authorization-failure"
    http_status = 403


class RecruitmentClosed(KernelError):
    code = "recruitment-closed"
    http_status = 410


class AlreadyEnrolled(KernelError):
    code = "already-enrolled"
    http_status = 409


class IdTaken(KernelError):
    code = "id-taken"
    http_status = 409


class NotFound(KernelError):
    code = "not-found"
    http_status = 404


class StreamExists(KernelError):
    code = "stream-exists"
    http_status = 409


class InvalidSchema(KernelError):
    code = "invalid-schema"
    http_status = 422


class InvalidRange(KernelError):
    code = "invalid-range"
    http_status = 422


class ConnectorRevoked(KernelError):
    code = "connector-revoked"
    http_status = 409


class ConnectorNotImplemented(KernelError):
    code = "not-implemented"
    http_status = 501


class EdgeKeyRejected(KernelError):
    code = "edge-key-rejected"
    http_status = 422


class SchemaConflict(KernelError):
    code = "schema-conflict"
    http_status = 409


class StaleVersion(KernelError):
    code = "stale-version"
    http_status = 409


class TypeMismatch(KernelError):
    code = "type-mismatch"
    http_status = 422


class TypeConflict(KernelError):
    code = "type-conflict"
    http_status = 409


class NotAvailable(KernelError):
    code = "not-available"
    http_status = 409


class InconsistentResponse(KernelError):
    code = "inconsistent-response"
    http_status = 422


class StudyClosed(KernelError):
    code = "study-closed"
    http_status = 409


class ValidationFailed(KernelError):
    """Carries a list of {path, message} entries; never fail-fast."""

    code = "validation-failed"
    http_status = 422

    def __init__(self, errors: list[dict], message: str = "validation failed"):
        super().__init__(message, errors=errors)
        self.errors = errors


class BadRequest(KernelError):
    code = "bad-request"
    http_status = 400
