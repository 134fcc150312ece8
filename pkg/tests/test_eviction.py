import time

import pytest
import requests

from spoton import cloudmock, eviction
from spoton.eviction import (
    EventsDocument,
    EvictionEvent,
    EvictionNotice,
    PollError,
    detect_preempt,
    notice_budget,
    parse_events_document,
    parse_not_before,
    poll,
)


def make_event(event_type="Preempt", not_before="Mon, 19 Sep 2022 18:29:24 GMT", event_id="e1"):
    return EvictionEvent(event_id=event_id, event_type=event_type,
                         event_status="Scheduled", not_before=not_before)


class TestParsing:
    def test_wire_document_shape(self):
        doc = parse_events_document({
            "DocumentIncarnation": 4,
            "Events": [{
                "EventId": "abc", "EventStatus": "Scheduled", "EventType": "Preempt",
                "ResourceType": "VirtualMachine", "Resources": ["vm0"],
                "NotBefore": "Mon, 19 Sep 2022 18:29:24 GMT",
            }],
        })
        assert doc.document_incarnation == 4
        assert doc.events[0].event_type == "Preempt"
        assert doc.events[0].resources == ("vm0",)

    def test_rfc1123_parse(self):
        got = parse_not_before("Mon, 19 Sep 2022 18:29:24 GMT", fallback=0.0)
        assert got == 1663612164.0

    def test_trailing_utc_tolerated(self):
        gmt = parse_not_before("Mon, 19 Sep 2022 18:29:24 GMT", fallback=0.0)
        utc = parse_not_before("Mon, 19 Sep 2022 18:29:24 UTC", fallback=0.0)
        assert utc == gmt

    def test_unparseable_falls_back_to_now(self):
        assert parse_not_before("whenever", fallback=123.0) == 123.0

    def test_round_trip_format_parse(self):
        when = 1763000000.0
        assert parse_not_before(eviction.format_not_before(when), fallback=0.0) == when


class TestDetect:
    def test_single_preempt(self):
        doc = EventsDocument(1, (make_event(),))
        notice = detect_preempt(doc, now=0.0)
        assert notice is not None
        assert notice.event_id == "e1"
        assert notice.deadline == 1663612164.0

    def test_no_events(self):
        assert detect_preempt(EventsDocument(1, ()), now=0.0) is None

    def test_non_preempt_ignored(self):
        doc = EventsDocument(1, (make_event(event_type="Reboot"),))
        assert detect_preempt(doc, now=0.0) is None

    def test_earliest_deadline_wins_order_insensitive(self):
        late = make_event(not_before="Mon, 19 Sep 2022 19:00:00 GMT", event_id="late")
        soon = make_event(not_before="Mon, 19 Sep 2022 18:30:00 GMT", event_id="soon")
        for order in ((late, soon), (soon, late)):
            notice = detect_preempt(EventsDocument(1, order), now=0.0)
            assert notice.event_id == "soon"


class TestBudget:
    def test_positive_budget(self):
        notice = EvictionNotice("e", deadline=1045.0, detected_at=1000.0)
        assert notice_budget(notice, now=1000.0) == 45.0
        assert not notice.below_floor

    def test_below_floor_flagged(self):
        notice = EvictionNotice("e", deadline=1010.0, detected_at=1000.0)
        assert notice_budget(notice, now=1000.0) == 10.0
        assert notice.below_floor

    def test_past_deadline_clamps_to_zero(self):
        notice = EvictionNotice("e", deadline=990.0, detected_at=1000.0)
        assert notice_budget(notice, now=1000.0) == 0.0


class TestPollAgainstMock:
    def test_poll_empty(self):
        with cloudmock.MockServer() as mock:
            doc = poll(mock.endpoint)
            assert doc.events == ()
            assert doc.document_incarnation >= 1

    def test_poll_after_trigger_carries_deadline(self):
        with cloudmock.MockServer() as mock:
            before = time.time()
            mock.trigger_eviction(60.0)
            doc = poll(mock.endpoint)
            assert len(doc.events) == 1
            notice = detect_preempt(doc)
            # RFC-1123 text has 1 s granularity
            assert abs(notice.deadline - (before + 60.0)) < 2.0

    def test_missing_metadata_header_rejected(self):
        with cloudmock.MockServer() as mock:
            resp = requests.get(mock.endpoint, timeout=5)
            assert resp.status_code == 400

    def test_non_200_is_retryable_error(self):
        with cloudmock.MockServer() as mock:
            with pytest.raises(PollError):
                poll(mock.base_url + "/nope")

    def test_unreachable_endpoint_is_retryable_error(self):
        with pytest.raises(PollError):
            poll("http://127.0.0.1:1/metadata/scheduledevents", timeout=0.2)
