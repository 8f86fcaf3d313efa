import threading

import pytest

from carekernel.errors import (
    BadRequest,
    RecruitmentClosed,
    StudyClosed,
    TypeConflict,
)
from carekernel.util import iso, parse_ts


class TestStudies:
    def test_create_with_groups(self, kernel):
        study = kernel.dashboard.create_study(
            "UNITE", ["control", "intervention"], "en-US", "America/Los_Angeles")
        assert study["groups"] == ["control", "intervention"]
        assert study["status"] == "draft"

    def test_duplicate_group_names(self, kernel):
        with pytest.raises(BadRequest):
            kernel.dashboard.create_study("X", ["a", "a"], "en-US", "UTC")

    def test_finnish_study(self, kernel):
        study = kernel.dashboard.create_study(
            "PREVENT", ["all"], "fi-FI", "Europe/Helsinki")
        assert study["locale"] == "fi-FI"

    def test_unknown_timezone(self, kernel):
        with pytest.raises(BadRequest):
            kernel.dashboard.create_study("X", ["a"], "en-US", "Mars/Olympus")


class TestRecruitmentLinks:
    def test_max_uses_enforced(self, kernel, study):
        link = kernel.dashboard.create_recruitment_link("s1", "all", max_uses=20)
        for i in range(20):
            kernel.gateway.enroll_anonymous(link["link_id"], f"u{i}@x.se")
        with pytest.raises(RecruitmentClosed):
            kernel.gateway.enroll_anonymous(link["link_id"], "u20@x.se")

    def test_expired_link(self, kernel, study):
        link = kernel.dashboard.create_recruitment_link(
            "s1", "all", expires_at=iso(kernel.clock.now()))
        with pytest.raises(RecruitmentClosed):
            kernel.gateway.enroll_anonymous(link["link_id"], "x@y.se")

    def test_unlimited_link(self, kernel, study):
        link = kernel.dashboard.create_recruitment_link("s1", "all")
        for i in range(40):
            kernel.gateway.enroll_anonymous(link["link_id"], f"v{i}@x.se")

    def test_closed_study_rejects_link_creation(self, kernel, study):
        kernel.dashboard.set_status("s1", "closed")
        with pytest.raises(StudyClosed):
            kernel.dashboard.create_recruitment_link("s1", "all")

    def test_concurrent_signups_never_exceed_max(self, kernel, study):
        link = kernel.dashboard.create_recruitment_link("s1", "all", max_uses=5)
        outcomes = []
        barrier = threading.Barrier(10)

        def enroll(i):
            barrier.wait()
            try:
                kernel.gateway.enroll_anonymous(link["link_id"], f"c{i}@x.se")
                outcomes.append("ok")
            except RecruitmentClosed:
                outcomes.append("closed")

        threads = [threading.Thread(target=enroll, args=(i,)) for i in range(10)]
        [t.start() for t in threads]
        [t.join() for t in threads]
        assert outcomes.count("ok") == 5
        used = kernel.storage.query_one(
            "SELECT uses FROM recruitment_links WHERE link_id = ?",
            (link["link_id"],))["uses"]
        assert used == 5


class TestAnnotations:
    def test_first_point_infers_schema(self, kernel, study):
        pid = study["participant"]
        result = kernel.dashboard.annotate(
            "dr", "s1", pid, "events", "2026-01-04T10:00:00Z", {"event": "fall"})
        assert result["stream"] == "annotation.events"
        stream = kernel.collection.get_stream("s1", "annotation.events")
        assert stream["value_schema"] == {"event": "text"}

    def test_type_conflict_after_inference(self, kernel, study):
        pid = study["participant"]
        kernel.dashboard.annotate("dr", "s1", pid, "events",
                                  "2026-01-04T10:00:00Z", {"event": "fall"})
        with pytest.raises(TypeConflict):
            kernel.dashboard.annotate("dr", "s1", pid, "events",
                                      "2026-01-04T11:00:00Z", {"event": 5})

    def test_annotations_behave_like_streams(self, kernel, study):
        """Metamorphic check: the engine treats annotation.* exactly like an
        ingest stream with the same points."""
        pid = study["participant"]
        push = {"action": "send_push", "channel": "internal",
                "title": "noted", "body": "{{point.event}}"}
        kernel.engine.register_rule("s1", "on_event", {
            "format": 1, "enabled": True, "target": "each_participant",
            "trigger": {"kind": "data", "stream": "annotation.events"},
            "pipeline": [], "actions": [push]})
        kernel.dashboard.annotate("dr", "s1", pid, "events",
                                  "2026-01-04T10:00:00Z", {"event": "fall"})
        executions = kernel.engine.list_executions(study_id="s1",
                                                   rule_id="on_event")
        assert len(executions) == 1
        rows = kernel.collection.query_stream("s1", "annotation.events")
        assert rows[0]["source"] == "annotation"
        summary = kernel.collection.daily_summary(pid, "2026-01-04")
        assert summary["per_stream"]["annotation.events"]["count"] == 1

    def test_duplicate_annotation_rejected(self, kernel, study):
        pid = study["participant"]
        kernel.dashboard.annotate("dr", "s1", pid, "events",
                                  "2026-01-04T10:00:00Z", {"event": "fall"})
        with pytest.raises(BadRequest, match="identical"):
            kernel.dashboard.annotate("dr", "s1", pid, "events",
                                      "2026-01-04T10:00:00Z", {"event": "fall"})


class TestManualNotifications:
    def test_rows_per_participant(self, kernel, study):
        pids = [study["participant"]] + [
            kernel.gateway.enroll_direct("s1")["anonymous_id"] for _ in range(2)]
        outcomes = kernel.dashboard.send_manual_notification(
            "s1", pids, "hello", "world")
        assert all(o["status"] == "delivered" for o in outcomes)
        rows = kernel.dashboard.list_outbox("s1", rule_id="manual")
        assert len(rows) == 3

    def test_empty_list_succeeds(self, kernel, study):
        assert kernel.dashboard.send_manual_notification("s1", [], "t", "b") == []
        assert kernel.dashboard.list_outbox("s1", rule_id="manual") == []

    def test_mixed_valid_unknown(self, kernel, study):
        outcomes = kernel.dashboard.send_manual_notification(
            "s1", [study["participant"], "ghost"], "t", "b")
        assert [o["status"] for o in outcomes] == ["delivered", "failed"]
        assert outcomes[1]["error"] == "unknown-participant"
        assert len(kernel.dashboard.list_outbox("s1", rule_id="manual")) == 1
