"""Loopback mock of the instance-metadata scheduled-events service.

Serves the same JSON wire shape the eviction client polls, plus a small
admin API used by tests and the drill harness:

    GET  /metadata/scheduledevents?api-version=...   (needs ``Metadata: true``)
    POST /admin/evict    {"delay_seconds": n}
    POST /admin/register {"pid": n}
    GET  /admin/state

Triggering an eviction behaves like the platform's simulate-eviction
command: a Preempt event appears with NotBefore at least ``min_notice``
out, and when the deadline passes the registered target's process group
is killed outright (no graceful signal -- the instance is "destroyed")
and the pending event is cleared.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse

from . import eviction

logger = logging.getLogger(__name__)

DEFAULT_MIN_NOTICE = 30.0


class PendingEvictionError(RuntimeError):
    """A Preempt event is already pending; only one at a time."""


class MockServer:
    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        min_notice: float = DEFAULT_MIN_NOTICE,
        kill: bool = True,
        allow_non_loopback: bool = False,
    ):
        if not allow_non_loopback and not host.startswith("127.") and host != "localhost":
            raise ValueError(f"refusing non-loopback bind {host!r}")
        self.min_notice = min_notice
        self.kill = kill
        self._lock = threading.Lock()
        self._incarnation = 1
        self._pending: dict | None = None  # wire-shaped event dict
        self._pending_deadline = 0.0
        self._target_pid: int | None = None
        self._kill_timer: threading.Timer | None = None
        self._plan_thread: threading.Thread | None = None
        self._plan_stop = threading.Event()
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.mock = self  # type: ignore[attr-defined]
        self._serve_thread: threading.Thread | None = None

    # -- lifecycle ----------------------------------------------------------

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}/metadata/scheduledevents?api-version=2020-07-01"

    @property
    def base_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._serve_thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._serve_thread.start()
        return self

    def stop(self) -> None:
        self._plan_stop.set()
        with self._lock:
            if self._kill_timer is not None:
                self._kill_timer.cancel()
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._plan_thread is not None:
            self._plan_thread.join(timeout=2)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- admin operations ---------------------------------------------------

    def register_target(self, pid: int) -> None:
        with self._lock:
            self._target_pid = pid

    def trigger_eviction(self, delay: float) -> str:
        """Create a pending Preempt event; delay clamps up to min_notice."""
        now = time.time()
        deadline = now + max(delay, self.min_notice)
        event_id = str(uuid.uuid4())
        with self._lock:
            if self._pending is not None:
                raise PendingEvictionError("an eviction is already pending")
            self._pending = {
                "EventId": event_id,
                "EventStatus": "Scheduled",
                "EventType": "Preempt",
                "ResourceType": "VirtualMachine",
                "Resources": ["vm0"],
                "NotBefore": eviction.format_not_before(deadline),
            }
            self._pending_deadline = deadline
            self._incarnation += 1
            self._kill_timer = threading.Timer(deadline - now, self._reclaim, args=(event_id,))
            self._kill_timer.daemon = True
            self._kill_timer.start()
        logger.info("eviction %s scheduled for %s", event_id, self._pending["NotBefore"])
        return event_id

    def schedule_evictions(self, plan: list[tuple[float, float]]) -> None:
        """Fire trigger_eviction per (at_time, delay) plan, times relative to now.

        Plan times must be strictly increasing; a trigger that lands while
        another event is still pending is dropped (the earlier one wins).
        """
        if any(b[0] <= a[0] for a, b in zip(plan, plan[1:])):
            raise ValueError("plan times must be strictly increasing")
        start = time.time()

        def runner():
            for at_time, delay in plan:
                wait = start + at_time - time.time()
                if wait > 0 and self._plan_stop.wait(wait):
                    return
                try:
                    self.trigger_eviction(delay)
                except PendingEvictionError:
                    logger.info("plan trigger at t=%s dropped: eviction already pending", at_time)

        self._plan_thread = threading.Thread(target=runner, daemon=True)
        self._plan_thread.start()

    def state_snapshot(self) -> dict:
        with self._lock:
            return {
                "document_incarnation": self._incarnation,
                "pending": dict(self._pending) if self._pending else None,
                "registered_pid": self._target_pid,
                "min_notice": self.min_notice,
                "kill": self.kill,
            }

    # -- internals ----------------------------------------------------------

    def _reclaim(self, event_id: str) -> None:
        with self._lock:
            if self._pending is None or self._pending["EventId"] != event_id:
                return
            self._pending = None
            self._incarnation += 1
            target = self._target_pid
        if self.kill and target is not None:
            _kill_tree(target)

    def events_document(self) -> dict:
        with self._lock:
            events = [dict(self._pending)] if self._pending else []
            return {"DocumentIncarnation": self._incarnation, "Events": events}


def _kill_tree(pid: int) -> None:
    """SIGKILL the process group of pid (fall back to the pid alone)."""
    try:
        os.killpg(os.getpgid(pid), signal.SIGKILL)
        logger.info("reclaimed: killed process group of pid %d", pid)
    except (ProcessLookupError, PermissionError, OSError):
        try:
            os.kill(pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            logger.info("reclaim target pid %d already gone", pid)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def mock(self) -> MockServer:
        return self.server.mock  # type: ignore[attr-defined]

    def _send_json(self, code: int, body: dict) -> None:
        data = json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        path = urlparse(self.path).path
        if path == "/metadata/scheduledevents":
            if self.headers.get("Metadata", "").lower() != "true":
                self._send_json(400, {"error": "Metadata header required"})
                return
            self._send_json(200, self.mock.events_document())
        elif path == "/admin/state":
            self._send_json(200, self.mock.state_snapshot())
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        path = urlparse(self.path).path
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except ValueError:
            self._send_json(400, {"error": "bad JSON"})
            return
        if path == "/admin/evict":
            try:
                event_id = self.mock.trigger_eviction(float(body.get("delay_seconds", 0)))
            except PendingEvictionError as exc:
                self._send_json(409, {"error": str(exc)})
                return
            self._send_json(200, {"event_id": event_id})
        elif path == "/admin/register":
            try:
                pid = int(body["pid"])
            except (KeyError, TypeError, ValueError):
                self._send_json(400, {"error": "pid required"})
                return
            self.mock.register_target(pid)
            self._send_json(200, {"registered": pid})
        else:
            self._send_json(404, {"error": "not found"})

    def log_message(self, fmt, *args):
        logger.debug("cloudmock http: " + fmt, *args)
