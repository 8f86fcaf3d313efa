"""Composition root: one CareKernel object owns storage, clock, and every
service, and wires the cross-module hooks (trigger bus, timezone resolution).

Timezone resolution chain, used by daily summaries, availability windows,
and cron scheduling: participant profile "tz", then the participant's group
profile "tz", then the study timezone, then UTC.
"""

from __future__ import annotations

import logging
from datetime import timezone
from pathlib import Path

from .clock import ManualClock, SystemClock
from .collection import CollectionService
from .dashboard import DashboardService
from .errors import NotFound
from .gateway import Gateway
from .interactions import InteractionService
from .permissions import PermissionMatrix, load_matrix
from .profiles import ProfileService, _group_scope
from .rpii import RuleEngine
from .storage import Storage, open_storage
from .util import iso, load_zone, sha256_hex

logger = logging.getLogger(__name__)


class CareKernel:
    def __init__(self, storage: Storage, clock=None,
                 matrix: PermissionMatrix | None = None,
                 simulation: bool = False,
                 token_lifetime_hours: float = 24.0,
                 webhook_backoff: tuple[float, ...] = (1.0, 4.0, 16.0),
                 catchup_horizon_minutes: int | None = 60):
        self.storage = storage
        self.simulation = simulation
        if clock is None:
            clock = ManualClock() if simulation else SystemClock()
        self.clock = clock
        self.matrix = matrix or load_matrix()
        if simulation and catchup_horizon_minutes == 60:
            catchup_horizon_minutes = None  # simulated days need full catch-up

        self.gateway = Gateway(storage, clock, self.matrix,
                               token_lifetime_hours=token_lifetime_hours)
        self.profiles = ProfileService(storage, clock)
        self.collection = CollectionService(storage, clock)
        self.dashboard = DashboardService(storage, clock, self.collection)
        self.interactions = InteractionService(storage, clock, self.profiles,
                                               self.collection)
        self.engine = RuleEngine(storage, clock, self.collection, self.profiles,
                                 webhook_backoff=webhook_backoff,
                                 catchup_horizon_minutes=catchup_horizon_minutes)

        # Cross-module wiring.
        self.collection.engine = self.engine
        self.collection.timezone_of = self.participant_timezone
        self.interactions.timezone_of = self.participant_timezone
        self.engine.timezone_of = self.participant_timezone
        self.engine.study_timezone_of = self.study_timezone

    # -- lifecycle ---------------------------------------------------------

    def startup_recovery(self) -> None:
        """Replay points stored but not yet offered to the trigger bus."""
        self.collection.replay_undispatched()

    # -- timezone resolution --------------------------------------------------

    def participant_timezone(self, participant_id: str):
        record = self.gateway.participant_record(participant_id)
        if record is None:
            return timezone.utc
        tz_value, _ = self.profiles.current_value("participant", participant_id, "tz")
        tz = load_zone(tz_value)
        if tz is not None:
            return tz
        return self.study_timezone(record["study_id"], record["group_id"])

    def study_timezone(self, study_id: str, group_id: str | None = None):
        if group_id is not None:
            tz_value, _ = self.profiles.current_value(
                "group", _group_scope(study_id, group_id), "tz"
            )
            tz = load_zone(tz_value)
            if tz is not None:
                return tz
        row = self.storage.query_one(
            "SELECT timezone FROM studies WHERE study_id = ?", (study_id,)
        )
        tz = load_zone(row["timezone"]) if row else None
        return tz or timezone.utc

    # -- blob store -----------------------------------------------------------

    def put_blob(self, content: bytes) -> str:
        ref = f"blob:sha256:{sha256_hex(content)}"
        with self.storage.tx():
            if not self.storage.query_one("SELECT 1 FROM blobs WHERE ref = ?", (ref,)):
                self.storage.execute(
                    "INSERT INTO blobs (ref, content, created_at) VALUES (?, ?, ?)",
                    (ref, content, iso(self.clock.now())),
                )
        return ref

    def get_blob(self, ref: str) -> bytes:
        row = self.storage.query_one("SELECT content FROM blobs WHERE ref = ?", (ref,))
        if row is None:
            raise NotFound(f"blob {ref}")
        return row["content"]


def open_kernel(db_path: str | Path, simulation: bool = False,
                matrix_path: str | Path | None = None, **kwargs) -> CareKernel:
    storage = open_storage(db_path)
    matrix = load_matrix(matrix_path)
    kernel = CareKernel(storage, matrix=matrix, simulation=simulation, **kwargs)
    kernel.startup_recovery()
    return kernel
