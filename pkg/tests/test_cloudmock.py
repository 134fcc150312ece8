import re
import subprocess
import sys
import time

import pytest
import requests

from spoton import cloudmock, eviction
from spoton.cloudmock import MockServer, PendingEvictionError

RFC1123 = re.compile(r"^(Mon|Tue|Wed|Thu|Fri|Sat|Sun), \d{2} "
                     r"(Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) \d{4} "
                     r"\d{2}:\d{2}:\d{2} GMT$")


class TestProtocol:
    def test_get_requires_header(self):
        with MockServer() as mock:
            assert requests.get(mock.endpoint, timeout=5).status_code == 400
            ok = requests.get(mock.endpoint, headers={"Metadata": "true"}, timeout=5)
            assert ok.status_code == 200
            assert ok.json()["Events"] == []

    def test_pending_event_wire_shape(self):
        with MockServer() as mock:
            mock.trigger_eviction(60)
            body = requests.get(mock.endpoint, headers={"Metadata": "true"}, timeout=5).json()
            (event,) = body["Events"]
            assert event["EventType"] == "Preempt"
            assert event["EventStatus"] == "Scheduled"
            assert event["ResourceType"] == "VirtualMachine"
            assert RFC1123.match(event["NotBefore"])

    def test_client_parses_mock_losslessly(self):
        with MockServer() as mock:
            event_id = mock.trigger_eviction(90)
            doc = eviction.poll(mock.endpoint)
            (event,) = doc.events
            raw = mock.state_snapshot()["pending"]
            assert event.event_id == raw["EventId"] == event_id
            assert event.event_type == raw["EventType"]
            assert event.event_status == raw["EventStatus"]
            assert event.not_before == raw["NotBefore"]
            assert list(event.resources) == raw["Resources"]

    def test_incarnation_increments_on_trigger(self):
        with MockServer() as mock:
            first = eviction.poll(mock.endpoint).document_incarnation
            mock.trigger_eviction(60)
            assert eviction.poll(mock.endpoint).document_incarnation == first + 1


class TestTrigger:
    def test_sub_floor_delay_clamped_to_min_notice(self):
        with MockServer() as mock:  # default 30 s floor
            before = time.time()
            mock.trigger_eviction(5)
            notice = eviction.detect_preempt(eviction.poll(mock.endpoint))
            assert notice.deadline >= before + 29.0  # RFC-1123 second granularity

    def test_second_trigger_rejected_while_pending(self):
        with MockServer() as mock:
            mock.trigger_eviction(60)
            with pytest.raises(PendingEvictionError):
                mock.trigger_eviction(60)

    def test_admin_evict_conflict_is_409(self):
        with MockServer() as mock:
            a = requests.post(mock.base_url + "/admin/evict", json={"delay_seconds": 60}, timeout=5)
            b = requests.post(mock.base_url + "/admin/evict", json={"delay_seconds": 60}, timeout=5)
            assert a.status_code == 200
            assert b.status_code == 409

    def test_plan_times_must_increase(self):
        with MockServer() as mock:
            with pytest.raises(ValueError):
                mock.schedule_evictions([(5.0, 30.0), (5.0, 30.0)])


class TestReclamation:
    def test_kill_at_deadline_and_state_reset(self):
        victim = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(60)"],
                                  start_new_session=True)
        try:
            with MockServer(min_notice=0.5) as mock:
                mock.register_target(victim.pid)
                incarnation = eviction.poll(mock.endpoint).document_incarnation
                trigger_at = time.time()
                mock.trigger_eviction(0.5)
                victim.wait(timeout=5)
                killed_at = time.time()
                assert victim.returncode == -9
                # kill lands within [not_before, not_before + 1)
                assert 0.5 <= killed_at - trigger_at < 1.6
                deadline_doc = eviction.poll(mock.endpoint)
                assert deadline_doc.events == ()
                assert deadline_doc.document_incarnation == incarnation + 2
        finally:
            if victim.poll() is None:
                victim.kill()

    def test_no_kill_mode_only_clears_event(self):
        victim = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(60)"],
                                  start_new_session=True)
        try:
            with MockServer(min_notice=0.3, kill=False) as mock:
                mock.register_target(victim.pid)
                mock.trigger_eviction(0.3)
                time.sleep(1.0)
                assert victim.poll() is None  # survived
                assert eviction.poll(mock.endpoint).events == ()
        finally:
            victim.kill()

    def test_admin_register_roundtrip(self):
        with MockServer() as mock:
            resp = requests.post(mock.base_url + "/admin/register", json={"pid": 12345}, timeout=5)
            assert resp.status_code == 200
            assert mock.state_snapshot()["registered_pid"] == 12345

    def test_refuses_non_loopback_bind(self):
        with pytest.raises(ValueError):
            MockServer(host="0.0.0.0")


def test_schedule_plan_fires_and_collapses_overlap():
    with MockServer(min_notice=0.4, kill=False) as mock:
        # second trigger at 0.25 lands while the first is pending -> dropped
        mock.schedule_evictions([(0.05, 0.4), (0.25, 0.4)])
        time.sleep(0.3)
        doc = eviction.poll(mock.endpoint)
        assert len(doc.events) == 1
        time.sleep(0.5)
        assert eviction.poll(mock.endpoint).events == ()
