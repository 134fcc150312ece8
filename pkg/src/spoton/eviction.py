"""Scheduled-events metadata client: poll, parse, detect preemption.

The wire format is the cloud metadata service's JSON shape:

    {"DocumentIncarnation": 3,
     "Events": [{"EventId": "...", "EventStatus": "Scheduled",
                 "EventType": "Preempt", "ResourceType": "VirtualMachine",
                 "Resources": ["vm0"], "NotBefore": "Mon, 19 Sep 2022 18:29:24 GMT"}]}

Requests must carry the ``Metadata: true`` header.  ``NotBefore`` is
RFC-1123 date text; a trailing UTC/GMT zone name is tolerated.  An
unparseable deadline degrades to "act immediately" (zero budget) rather
than crashing the poller.
"""

from __future__ import annotations

import dataclasses
import email.utils
import logging
import time

import requests

logger = logging.getLogger(__name__)

PROTOCOL_NOTICE_FLOOR = 30.0  # seconds the platform promises before a preemption

PREEMPT = "Preempt"
EVENT_TYPES = ("Preempt", "Reboot", "Redeploy", "Freeze", "Terminate")


class PollError(RuntimeError):
    """Transient poll failure; retry at the next tick."""


@dataclasses.dataclass
class EvictionEvent:
    event_id: str
    event_type: str
    event_status: str
    not_before: str
    resources: tuple[str, ...] = ()


@dataclasses.dataclass
class EventsDocument:
    document_incarnation: int
    events: tuple[EvictionEvent, ...]


@dataclasses.dataclass
class EvictionNotice:
    event_id: str
    deadline: float  # unix seconds
    detected_at: float
    below_floor: bool = False


def parse_not_before(text: str, fallback: float) -> float:
    """RFC-1123 date text -> unix seconds; ``fallback`` on any parse failure."""
    cleaned = text.strip()
    if cleaned.endswith(" UTC"):
        cleaned = cleaned[:-4] + " GMT"
    try:
        parsed = email.utils.parsedate_to_datetime(cleaned)
    except (ValueError, TypeError):
        parsed = None
    if parsed is None:
        logger.warning("unparseable NotBefore %r; treating as immediate", text)
        return fallback
    return parsed.timestamp()


def format_not_before(when: float) -> str:
    return email.utils.formatdate(when, usegmt=True)


def parse_events_document(body: dict) -> EventsDocument:
    events = []
    for raw in body.get("Events", []):
        events.append(
            EvictionEvent(
                event_id=str(raw.get("EventId", "")),
                event_type=str(raw.get("EventType", "")),
                event_status=str(raw.get("EventStatus", "")),
                not_before=str(raw.get("NotBefore", "")),
                resources=tuple(raw.get("Resources", []) or ()),
            )
        )
    return EventsDocument(
        document_incarnation=int(body.get("DocumentIncarnation", 0)),
        events=tuple(events),
    )


def poll(endpoint: str, timeout: float = 5.0, session: requests.Session | None = None) -> EventsDocument:
    """GET the scheduled-events endpoint and parse the response.

    Any network failure, non-200 status, or malformed body raises
    PollError; callers log and retry at the next tick.
    """
    get = (session or requests).get
    try:
        resp = get(endpoint, headers={"Metadata": "true"}, timeout=timeout)
    except requests.RequestException as exc:
        raise PollError(f"metadata endpoint unreachable: {exc}") from exc
    if resp.status_code != 200:
        raise PollError(f"metadata endpoint returned {resp.status_code}")
    try:
        return parse_events_document(resp.json())
    except (ValueError, TypeError, AttributeError) as exc:
        raise PollError(f"malformed events document: {exc}") from exc


def detect_preempt(doc: EventsDocument, now: float | None = None) -> EvictionNotice | None:
    """Notice for the earliest-deadline Preempt event; None if no Preempt."""
    now = time.time() if now is None else now
    best: EvictionNotice | None = None
    for event in doc.events:
        if event.event_type != PREEMPT:
            continue
        deadline = parse_not_before(event.not_before, fallback=now)
        if best is None or deadline < best.deadline:
            best = EvictionNotice(event_id=event.event_id, deadline=deadline, detected_at=now)
    return best


def notice_budget(notice: EvictionNotice, now: float, floor: float = PROTOCOL_NOTICE_FLOOR) -> float:
    """Seconds left before the deadline, clamped at 0.

    Flags the notice (``below_floor``) when the budget at first detection
    is under the protocol's promised floor.
    """
    budget = max(notice.deadline - now, 0.0)
    if budget < floor and abs(now - notice.detected_at) < 1e-6:
        notice.below_floor = True
    return budget
