"""Append-only run ledger: the timeline of attempts, checkpoints and evictions.

Persisted as line-delimited records under ``<store_root>/ledger/events.log``,
one event per line:

    2026-08-26T12:00:00.123+00:00 attempt_start attempt=1 resumed_from=none

i.e. ISO-8601 timestamp, event kind, then ``key=value`` fields.  The file
accumulates across attempts; resuming appends to it.  The in-memory view
is rebuilt from the file so reports can cover a whole multi-attempt run.
"""

from __future__ import annotations

import dataclasses
import datetime
import os
from pathlib import Path


def _now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="milliseconds")


@dataclasses.dataclass
class LedgerEvent:
    timestamp: str
    kind: str
    fields: dict

    def to_line(self) -> str:
        parts = [self.timestamp, self.kind]
        for key, value in self.fields.items():
            parts.append(f"{key}={_encode(value)}")
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "LedgerEvent":
        tokens = line.split()
        if len(tokens) < 2:
            raise ValueError(f"bad ledger line: {line!r}")
        fields = {}
        for token in tokens[2:]:
            key, _, value = token.partition("=")
            fields[key] = value
        return cls(timestamp=tokens[0], kind=tokens[1], fields=fields)


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value).replace(" ", "_")


class RunLedger:
    """Single-writer event log; ``record`` appends and flushes one line."""

    def __init__(self, store_root):
        self.path = Path(store_root) / "ledger" / "events.log"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.events: list[LedgerEvent] = []
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                line = line.strip()
                if line:
                    self.events.append(LedgerEvent.from_line(line))

    def record(self, kind: str, **fields) -> LedgerEvent:
        # normalize values to their on-disk text form so in-memory and
        # reloaded views are identical
        event = LedgerEvent(
            timestamp=_now_iso(), kind=kind,
            fields={k: _encode(v) for k, v in fields.items()},
        )
        self.events.append(event)
        with open(self.path, "a") as fh:
            fh.write(event.to_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        return event

    # -- derived views ------------------------------------------------------

    def by_kind(self, kind: str) -> list[LedgerEvent]:
        return [e for e in self.events if e.kind == kind]

    def next_attempt_id(self) -> int:
        starts = self.by_kind("attempt_start")
        return 1 + max((int(e.fields["attempt"]) for e in starts), default=0)

    def attempts(self) -> list[dict]:
        out = {}
        for e in self.by_kind("attempt_start"):
            out[int(e.fields["attempt"])] = {
                "attempt_id": int(e.fields["attempt"]),
                "start": e.timestamp,
                "end": None,
                "end_reason": None,
            }
        for e in self.by_kind("attempt_end"):
            entry = out.get(int(e.fields["attempt"]))
            if entry is not None:
                entry["end"] = e.timestamp
                entry["end_reason"] = e.fields.get("reason")
        return [out[k] for k in sorted(out)]

    def checkpoints(self) -> list[dict]:
        out = []
        for e in self.by_kind("ckpt_end"):
            out.append(
                {
                    "sequence": int(e.fields.get("seq", 0)),
                    "kind": e.fields.get("ckpt_kind", "?"),
                    "ok": e.fields.get("ok") == "true",
                    "duration": float(e.fields.get("duration", 0.0)),
                    "stage": e.fields.get("stage"),
                    "step": int(e.fields.get("step", 0)),
                }
            )
        return out

    def evictions(self) -> list[dict]:
        out = []
        for e in self.by_kind("eviction"):
            out.append(
                {
                    "event_id": e.fields.get("event_id"),
                    "deadline": float(e.fields.get("deadline", 0.0)),
                    "notice_time": float(e.fields.get("notice_time", 0.0)),
                    "budget": float(e.fields.get("budget", 0.0)),
                    "action": e.fields.get("action"),
                    "termination_ckpt_ok": e.fields.get("termination_ckpt_ok") == "true",
                }
            )
        return out

    def stage_times(self) -> dict[str, float]:
        """Wall seconds spent per stage, summed across attempts."""
        totals: dict[str, float] = {}
        for e in self.by_kind("stage_time"):
            name = e.fields["stage"]
            totals[name] = totals.get(name, 0.0) + float(e.fields["seconds"])
        return totals
