"""Simulator tests: scenario validation, determinism, verify semantics,
and the edge-value locality guarantee."""

import json
import re
import threading

import pytest
import yaml

from conftest import ADMIN_SECRET
from carekernel.http_api import make_server
from carekernel.service import CareKernel
from carekernel.simulator import run_scenario, verify_transcript
from carekernel.simulator.scenario import ScenarioError, load_scenario, validate_scenario
from carekernel.simulator.verify import AssertionSyntaxError
from carekernel.storage import open_storage


@pytest.fixture
def fresh_server(tmp_path):
    """Factory for independent sim servers (each scenario needs a clean db)."""
    servers = []

    def make(name):
        kernel = CareKernel(open_storage(tmp_path / f"{name}.db"),
                            simulation=True, webhook_backoff=(0.01,))
        kernel.gateway.ensure_bootstrap_admin(ADMIN_SECRET)
        httpd = make_server(kernel)
        threading.Thread(target=httpd.serve_forever, daemon=True).start()
        servers.append(httpd)
        return f"http://127.0.0.1:{httpd.server_address[1]}", kernel

    yield make
    for httpd in servers:
        httpd.shutdown()
        httpd.server_close()


class TestScenarioValidation:
    def test_fixture_corpus_is_valid(self):
        for name in ("triage", "smart_ema", "recommender", "bedtime",
                     "mhn_summary", "dccc_vitals"):
            load_scenario(f"scenarios/{name}.yaml")

    def test_missing_study_section(self):
        errors = validate_scenario({"name": "x", "start": "2026-01-01T00:00:00Z",
                                    "end": "2026-01-02T00:00:00Z"})
        assert any("study" in e for e in errors)

    def test_unknown_event_kind(self):
        errors = validate_scenario({
            "name": "x", "start": "2026-01-01T00:00:00Z",
            "end": "2026-01-02T00:00:00Z",
            "study": {"groups": ["all"]},
            "participants": [{"ref": "p1", "events": [
                {"at": "2026-01-01T01:00:00Z", "do": "teleport"}]}],
        })
        assert any("teleport" in e for e in errors)

    def test_decreasing_event_times(self):
        errors = validate_scenario({
            "name": "x", "start": "2026-01-01T00:00:00Z",
            "end": "2026-01-02T00:00:00Z",
            "study": {"groups": ["all"]},
            "participants": [{"ref": "p1", "events": [
                {"at": "2026-01-01T02:00:00Z", "do": "redeliver"},
                {"at": "2026-01-01T01:00:00Z", "do": "redeliver"}]}],
        })
        assert any("non-decreasing" in e for e in errors)

    def test_load_raises_on_invalid(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"name": "bad"}))
        with pytest.raises(ScenarioError):
            load_scenario(path)


NONDETERMINISTIC = [
    (re.compile(r"ex-[0-9a-f]+-\d+"), "EXID"),
    (re.compile(r"ex-sdk-\d+"), "EXID"),
    (re.compile(r"rs-[0-9a-z]{12}"), "RSID"),
    (re.compile(r"lk-[0-9a-z]{16}"), "LKID"),
    (re.compile(r"\b[rs]-[0-9a-z]{10}\b"), "PRINCIPAL"),
    (re.compile(r"st-[0-9a-z]{8}"), "STUDY"),
]


def normalize(path):
    text = open(path).read()
    for pattern, replacement in NONDETERMINISTIC:
        text = pattern.sub(replacement, text)
    return text


class TestDeterminism:
    def test_same_seed_identical_normalized_transcripts(self, fresh_server, tmp_path):
        outputs = []
        for run in range(2):
            url, _ = fresh_server(f"det{run}")
            out = tmp_path / f"t{run}.jsonl"
            run_scenario("scenarios/triage.yaml", url, ADMIN_SECRET,
                         speed="instant", seed=99, out_path=out)
            outputs.append(normalize(out))
        assert outputs[0] == outputs[1]

    def test_different_seed_changes_generated_data(self, fresh_server, tmp_path):
        outputs = []
        for run, seed in enumerate((1, 2)):
            url, _ = fresh_server(f"seed{run}")
            out = tmp_path / f"s{run}.jsonl"
            run_scenario("scenarios/mhn_summary.yaml", url, ADMIN_SECRET,
                         speed="instant", seed=seed, out_path=out)
            outputs.append(normalize(out))
        assert outputs[0] != outputs[1]  # random_walk generator reseeded


class TestVerify:
    def _run_triage(self, fresh_server, tmp_path):
        url, _ = fresh_server("verify")
        out = tmp_path / "t.jsonl"
        run_scenario("scenarios/triage.yaml", url, ADMIN_SECRET,
                     speed="instant", out_path=out)
        return out

    def test_fixture_assertions_pass(self, fresh_server, tmp_path):
        out = self._run_triage(fresh_server, tmp_path)
        assert verify_transcript(out, "scenarios/triage.assert.yaml") == []

    def test_failing_assertion_reported(self, fresh_server, tmp_path):
        out = self._run_triage(fresh_server, tmp_path)
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"assertions": [
            {"kind": "outbox_count", "channel": "email", "equals": 99}]}))
        failures = verify_transcript(out, bad)
        assert len(failures) == 1 and "99" in failures[0]

    def test_missing_key_named_explicitly(self, fresh_server, tmp_path):
        out = self._run_triage(fresh_server, tmp_path)
        probe = tmp_path / "probe.yaml"
        probe.write_text(yaml.safe_dump({"assertions": [
            {"kind": "profile_versions", "participant": "p1",
             "key": "recommendation", "equals": [1]}]}))
        failures = verify_transcript(out, probe)
        assert len(failures) == 1 and "recommendation" in failures[0]

    def test_malformed_assertions_raise(self, fresh_server, tmp_path):
        out = self._run_triage(fresh_server, tmp_path)
        bad = tmp_path / "syntax.yaml"
        bad.write_text(yaml.safe_dump({"assertions": [{"kind": "no_such_kind"}]}))
        with pytest.raises(AssertionSyntaxError):
            verify_transcript(out, bad)
        empty = tmp_path / "empty.yaml"
        empty.write_text("{}")
        with pytest.raises(AssertionSyntaxError):
            verify_transcript(out, empty)


class TestEdgeValues:
    def test_edge_values_stay_local(self, fresh_server, tmp_path):
        """The state file holds them; the transcript never transmits them."""
        url, kernel = fresh_server("edge")
        scenario = {
            "name": "edgecase", "seed": 1,
            "start": "2026-02-01T00:00:00Z", "end": "2026-02-01T02:00:00Z",
            "study": {
                "study_id": "edge-study", "groups": ["all"],
                "timezone": "UTC",
                "profile_schema": {
                    "name": {"value_type": "text", "storage": "edge",
                             "visible_to_participant": True,
                             "writable_by": ["participant"]},
                    "weight": {"value_type": "number", "storage": "cloud",
                               "visible_to_participant": True,
                               "writable_by": ["participant"]},
                },
            },
            "participants": [{
                "ref": "p1", "group": "all",
                "edge_values": {"name": "Kaarina Unique Virtanen"},
                "events": [
                    {"at": "2026-02-01T01:00:00Z", "do": "set_profile",
                     "key": "weight", "value": 61.5},
                ],
            }],
        }
        path = tmp_path / "edge.yaml"
        path.write_text(yaml.safe_dump(scenario))
        out = tmp_path / "edge.jsonl"
        run_scenario(path, url, ADMIN_SECRET, speed="instant", out_path=out)
        transcript_text = out.read_text()
        assert "Kaarina Unique Virtanen" not in transcript_text
        state = json.loads((tmp_path / "edge.jsonl.state.json").read_text())
        assert state["edge_values"]["p1"]["name"] == "Kaarina Unique Virtanen"
        # server-side scan: no edge values stored
        rows = kernel.storage.query(
            "SELECT pv.* FROM profile_values pv JOIN profile_schemas ps "
            "ON ps.study_id = pv.study_id AND ps.key_name = pv.key_name "
            "WHERE ps.storage = 'edge'")
        assert rows == []
