"""Transcript-recording HTTP client used by the scenario runner.

Every request/response pair lands in the transcript (bodies verbatim except
credentials, which are redacted on both sides). Tokens are refreshed against
simulated time: long simulated timelines outlive real token lifetimes, so the
client re-authenticates whenever the current token is close to expiry.
"""

from __future__ import annotations

import json
from datetime import timedelta

import requests

from ..util import parse_ts

REDACTED_FIELDS = {"token", "secret", "credential"}


def _redact(doc):
    if isinstance(doc, dict):
        return {
            k: ("***" if k in REDACTED_FIELDS and isinstance(v, str) else _redact(v))
            for k, v in doc.items()
        }
    if isinstance(doc, list):
        return [_redact(v) for v in doc]
    return doc


class ScenarioAborted(RuntimeError):
    def __init__(self, message: str, transcript: list):
        super().__init__(message)
        self.transcript = transcript


class TranscriptClient:
    def __init__(self, base_url: str, transcript: list):
        self.base_url = base_url.rstrip("/")
        self.transcript = transcript
        self.session = requests.Session()
        self._credentials: dict[str, str] = {}
        self._tokens: dict[str, tuple[str, object]] = {}  # actor -> (token, expires)
        self.sim_now = None  # updated by the runner as the clock moves
        self._seq = 0

    def register_actor(self, actor: str, credential: str) -> None:
        self._credentials[actor] = credential

    def _record(self, record: dict) -> None:
        self._seq += 1
        record["seq"] = self._seq
        self.transcript.append(record)

    def _token_for(self, actor: str) -> str:
        token, expires = self._tokens.get(actor, (None, None))
        if token is not None and self.sim_now is not None and expires is not None:
            if expires - self.sim_now > timedelta(hours=1):
                return token
        elif token is not None and self.sim_now is None:
            return token
        credential = self._credentials.get(actor)
        if credential is None:
            raise ScenarioAborted(f"no credential for actor {actor!r}", self.transcript)
        resp = self.session.post(
            f"{self.base_url}/auth/login", json={"credential": credential}, timeout=30
        )
        if resp.status_code != 200:
            raise ScenarioAborted(
                f"login failed for {actor!r}: {resp.status_code} {resp.text}",
                self.transcript,
            )
        doc = resp.json()
        expires = parse_ts(doc["expires_at"])
        self._tokens[actor] = (doc["token"], expires)
        self._record({"kind": "note", "note": f"login {actor}"})
        return doc["token"]

    def request(self, actor: str | None, method: str, path: str,
                body=None, query: dict | None = None,
                expect: int | tuple = 200, record: bool = True) -> dict:
        """One API call; aborts the scenario on an unexpected status."""
        headers = {}
        if actor is not None:
            headers["Authorization"] = f"Bearer {self._token_for(actor)}"
        url = f"{self.base_url}{path}"
        resp = self.session.request(
            method, url, json=body, params=query or {}, headers=headers, timeout=60
        )
        try:
            doc = resp.json()
        except json.JSONDecodeError:
            doc = {"raw": resp.text}
        if record:
            self._record({
                "kind": "request", "as": actor, "method": method, "path": path,
                "query": query or {}, "body": _redact(body),
                "t": self.sim_now.isoformat() if self.sim_now else None,
            })
            self._record({"kind": "response", "status": resp.status_code,
                          "body": _redact(doc)})
        expected = expect if isinstance(expect, tuple) else (expect,)
        if resp.status_code not in expected:
            raise ScenarioAborted(
                f"{method} {path} returned {resp.status_code} "
                f"(expected {expected}): {json.dumps(doc)[:500]}",
                self.transcript,
            )
        return doc
