"""Simulated third-party connector adapters.

The registry mirrors the supported-device table: every vendor is present,
the under-development ones refuse to sync. Each simulated adapter pulls from
a per-connector upstream queue (seeded by tests or the simulator) and honors
the same contract a real cloud API adapter would: fetch rows after a cursor,
return the new cursor, raise AdapterAuthRevoked on a 401-style marker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ConnectorNotImplemented
from .storage import Storage


@dataclass(frozen=True)
class VendorInfo:
    vendor: str
    data_type: str
    integration: str  # direct | third-party | direct/third-party
    stage: str        # supported | under-dev


VENDOR_REGISTRY: dict[str, VendorInfo] = {
    v.vendor: v
    for v in [
        VendorInfo("samsung_tizen", "raw/processed", "direct", "supported"),
        VendorInfo("wearos", "raw/processed", "direct", "under-dev"),
        VendorInfo("empatica_e4", "raw/processed", "direct/third-party", "under-dev"),
        VendorInfo("garmin", "processed", "third-party", "supported"),
        VendorInfo("withings", "processed", "third-party", "supported"),
        VendorInfo("fitbit", "processed", "third-party", "under-dev"),
        VendorInfo("oura", "processed", "third-party", "supported"),
        VendorInfo("aware", "raw/processed", "direct", "supported"),
    ]
}


class AdapterAuthRevoked(Exception):
    """Upstream rejected our credentials; the link must be re-authorized."""


class SimulatedAdapter:
    """Cursor-based pull from the connector_upstream queue.

    Upstream rows are ingest-shaped documents {stream, timestamp, values}.
    A row of {"status": 401} simulates an auth revocation.
    """

    def __init__(self, storage: Storage, vendor: str):
        self.storage = storage
        self.vendor = vendor

    def fetch(self, connector_id: str, cursor: str) -> tuple[list[dict], str]:
        info = VENDOR_REGISTRY.get(self.vendor)
        if info is None:
            raise ConnectorNotImplemented(f"unknown vendor {self.vendor!r}")
        if info.stage != "supported":
            raise ConnectorNotImplemented(
                f"vendor {self.vendor!r} integration is under development"
            )
        position = int(cursor or "0")
        rows = self.storage.query(
            "SELECT seq, row_json FROM connector_upstream "
            "WHERE connector_id = ? AND seq > ? ORDER BY seq",
            (connector_id, position),
        )
        out = []
        last = position
        for row in rows:
            doc = json.loads(row["row_json"])
            if isinstance(doc, dict) and doc.get("status") == 401:
                raise AdapterAuthRevoked()
            out.append(doc)
            last = row["seq"]
        return out, str(last)


def seed_upstream(storage: Storage, connector_id: str, rows: list[dict]) -> int:
    """Append rows to a connector's simulated upstream; returns count added."""
    with storage.tx():
        row = storage.query_one(
            "SELECT MAX(seq) AS s FROM connector_upstream WHERE connector_id = ?",
            (connector_id,),
        )
        seq = row["s"] or 0
        for doc in rows:
            seq += 1
            storage.execute(
                "INSERT INTO connector_upstream (connector_id, seq, row_json) "
                "VALUES (?, ?, ?)",
                (connector_id, seq, json.dumps(doc)),
            )
    return len(rows)
