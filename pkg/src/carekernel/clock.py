"""Service clock.

All timestamps inside the service come from a Clock instance so that a server
started in simulation mode can run on a manually advanced timeline. Production
servers use SystemClock; the manual clock is only reachable through the
test-only clock endpoint, which the HTTP layer refuses to register unless the
simulation flag is set.
"""

from __future__ import annotations

import threading
from datetime import datetime, timezone


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class ManualClock:
    """Clock that moves only when told to. Thread-safe."""

    def __init__(self, start: datetime | None = None):
        self._lock = threading.Lock()
        self._now = start or datetime(2026, 1, 1, tzinfo=timezone.utc)

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def set(self, when: datetime) -> None:
        if when.tzinfo is None:
            raise ValueError("manual clock requires an aware datetime")
        with self._lock:
            if when < self._now:
                raise ValueError("manual clock cannot move backwards")
            self._now = when.astimezone(timezone.utc)

    def advance_seconds(self, seconds: float) -> datetime:
        from datetime import timedelta

        with self._lock:
            self._now = self._now + timedelta(seconds=seconds)
            return self._now
