"""Shared fixtures: a fresh kernel per test, and a threaded HTTP server."""

from __future__ import annotations

import threading

import pytest

from carekernel.http_api import make_server
from carekernel.service import CareKernel
from carekernel.storage import open_storage
from carekernel.util import parse_ts

ADMIN_SECRET = "test-root-secret"
T0 = "2026-01-05T00:00:00Z"


@pytest.fixture
def kernel(tmp_path):
    k = CareKernel(open_storage(tmp_path / "kernel.db"), simulation=True,
                   webhook_backoff=(0.01, 0.02, 0.04))
    k.clock.set(parse_ts(T0))
    k.gateway.ensure_bootstrap_admin(ADMIN_SECRET)
    yield k
    k.storage.close()


@pytest.fixture
def study(kernel):
    """One active study with a heart-rate stream and one participant."""
    kernel.dashboard.create_study("S1", ["all"], "en-US", "UTC", study_id="s1")
    kernel.dashboard.set_status("s1", "active")
    kernel.collection.register_stream("s1", "heart_rate", {"bpm": "number"})
    participant = kernel.gateway.enroll_direct("s1")["anonymous_id"]
    return {"study_id": "s1", "participant": participant}


@pytest.fixture
def server(kernel):
    httpd = make_server(kernel)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    port = httpd.server_address[1]
    yield {"url": f"http://127.0.0.1:{port}", "kernel": kernel,
           "admin_secret": ADMIN_SECRET}
    httpd.shutdown()
    httpd.server_close()
