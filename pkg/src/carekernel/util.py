"""Small shared helpers: timestamps, ids, durations, canonical hashing."""

from __future__ import annotations

import hashlib
import json
import re
import secrets
from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

# Unambiguous 32-symbol alphabet (Crockford base32, lowercase) used for
# human-transcribable participant ids.
ID_ALPHABET = "0123456789abcdefghjkmnpqrstvwxyz"

_DURATION_RE = re.compile(r"^\s*(\d+)\s*(ms|s|m|h|d|w)?\s*$")
_DURATION_UNITS = {
    "ms": 0.001,
    "s": 1,
    "m": 60,
    "h": 3600,
    "d": 86400,
    "w": 604800,
}


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def iso(ts: datetime) -> str:
    """Canonical wire/storage form: UTC, microseconds, +00:00 offset."""
    if ts.tzinfo is None:
        raise ValueError("naive datetime")
    return ts.astimezone(timezone.utc).isoformat(timespec="microseconds")


def parse_ts(value: str) -> datetime:
    """Parse an ISO-8601 timestamp; 'Z' suffix and offsets accepted."""
    if not isinstance(value, str):
        raise ValueError(f"not a timestamp: {value!r}")
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_duration(value) -> timedelta:
    """Parse '90s', '30m', '2h', '1d' or a bare number of seconds."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        seconds = float(value)
    else:
        m = _DURATION_RE.match(str(value))
        if not m:
            raise ValueError(f"bad duration: {value!r}")
        seconds = int(m.group(1)) * _DURATION_UNITS[m.group(2) or "s"]
    if seconds <= 0:
        raise ValueError(f"duration must be > 0: {value!r}")
    return timedelta(seconds=seconds)


def random_id(length: int = 12) -> str:
    return "".join(secrets.choice(ID_ALPHABET) for _ in range(length))


def new_secret() -> str:
    return secrets.token_urlsafe(32)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(doc) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_zone(name: str | None) -> ZoneInfo | None:
    """Resolve a timezone name; None on anything malformed."""
    if not name or not isinstance(name, str):
        return None
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError, KeyError):
        return None


def civil_date(ts: datetime, tz: ZoneInfo | None) -> str:
    """Civil date 'YYYY-MM-DD' of a UTC instant in the given timezone."""
    local = ts.astimezone(tz or timezone.utc)
    return local.date().isoformat()


def floor_to_minute(ts: datetime) -> datetime:
    return ts.replace(second=0, microsecond=0)
