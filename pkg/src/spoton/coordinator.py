"""Workload supervisor: periodic checkpoints, eviction handling, resume.

Three concurrent activities run while a workload attempt is alive: the
child-process reader, the periodic checkpoint timer, and the eviction
poller.  The reader and poller feed a single queue; the main loop is the
only writer of the ledger and the checkpoint store, so checkpoint
execution is serialized by construction.

On an eviction notice the coordinator picks an ActionPlan: take an
opportunistic termination checkpoint when the notice budget covers the
snapshot estimate with a safety margin, let an in-flight periodic
checkpoint finish and count as terminal, or stop immediately when the
budget is too small.  A hard kill without a detected notice (the mock
reclaiming the "instance") surfaces as an evicted outcome too; resume
then relies on the last periodic checkpoint.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import queue
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path
from urllib.parse import urlparse

import requests

from . import checkpoint, eviction, workload
from .config import CoordinatorConfig
from .ledger import RunLedger

logger = logging.getLogger(__name__)

EXIT_COMPLETED = 0
EXIT_EVICTED = 64
EXIT_ERROR = 65
EXIT_CONFIG = 66
EXIT_DIGEST_MISMATCH = 70

ACTION_TERMINATION_CKPT = "termination_checkpoint_then_stop"
ACTION_STOP = "stop_without_checkpoint"
ACTION_IGNORE = "ignore"

# Stop-the-child grace before escalating to SIGKILL
_STOP_GRACE = 2.0
_TICK = 0.05


@dataclasses.dataclass
class ActionPlan:
    action: str
    reason: str


@dataclasses.dataclass
class RunOutcome:
    status: str  # completed | evicted | failed
    ledger: RunLedger
    digest: str | None = None

    @property
    def exit_code(self) -> int:
        return {"completed": EXIT_COMPLETED, "evicted": EXIT_EVICTED}.get(self.status, EXIT_ERROR)


def on_eviction_notice(
    notice: eviction.EvictionNotice,
    inflight: bool,
    estimate: float,
    now: float,
    safety_factor: float = 1.5,
) -> ActionPlan:
    """Pure policy: what to do about a preemption notice."""
    budget = max(notice.deadline - now, 0.0)
    if inflight:
        return ActionPlan(
            ACTION_IGNORE,
            f"checkpoint already in flight; let it finish as the terminal checkpoint (budget {budget:.1f}s)",
        )
    needed = estimate * safety_factor
    if budget >= needed:
        return ActionPlan(
            ACTION_TERMINATION_CKPT,
            f"budget {budget:.1f}s covers estimate {estimate:.1f}s x {safety_factor:g}",
        )
    return ActionPlan(
        ACTION_STOP,
        f"opportunistic checkpoint skipped: budget {budget:.1f}s < {needed:.1f}s needed",
    )


def schedule_next_checkpoint(last_completed: float, interval: float, now: float) -> float:
    """Next checkpoint instant; a stalled timer yields one immediate checkpoint, no burst."""
    if interval <= 0:
        raise ValueError("interval must be > 0")
    due = last_completed + interval
    return due if due > now else now


def run(config: CoordinatorConfig) -> RunOutcome:
    """Launch the workload from scratch and supervise it to completion or eviction."""
    return _Supervisor(config).run(restore_chain=[])


def resume(config: CoordinatorConfig) -> RunOutcome:
    """Restore from the most recent valid checkpoint (fall back along the
    chain of older valid ones), or start from scratch if none exists."""
    chain = checkpoint.valid_manifests(config.store_root)
    return _Supervisor(config).run(restore_chain=chain)


class _Supervisor:
    def __init__(self, config: CoordinatorConfig):
        self.config = config
        self.events: queue.Queue = queue.Queue()
        self.stop_poller = threading.Event()
        self.handled_event_ids: set[str] = set()
        self.max_observed_ckpt = 0.0
        self.external = None
        if config.checkpointer == "transparent":
            self.external = checkpoint.ExternalCheckpointer(
                config.snapshot_cmd, config.restore_cmd,
                estimate_seconds=config.snapshot_time_estimate,
            )

    # -- estimate: configured value is a floor; observed durations raise it

    def snapshot_estimate(self) -> float:
        return max(self.max_observed_ckpt, self.config.snapshot_time_estimate)

    # -- setup helpers ------------------------------------------------------

    def _select_restore(self, chain, scratch: Path, ledger: RunLedger):
        """Walk the valid-checkpoint chain newest-first; return (manifest, state_file)."""
        for manifest in chain:
            try:
                payload = checkpoint.read_payload(manifest, self.config.store_root)
                if self.external is not None:
                    restore_dir = scratch / f"restore-{manifest.sequence}"
                    self.external.restore(payload, str(restore_dir))
                    state_file = restore_dir / "state.bin"
                    workload.deserialize(state_file.read_bytes(), self.config.workload)
                else:
                    workload.deserialize(payload, self.config.workload)
                    state_file = scratch / f"restore-{manifest.sequence}.bin"
                    state_file.write_bytes(payload)
                return manifest, state_file
            except (OSError, workload.PayloadError, checkpoint.CheckpointFailed) as exc:
                logger.warning("restore from seq %d failed: %s", manifest.sequence, exc)
                ledger.record("restore_fallback", seq=manifest.sequence, error=type(exc).__name__)
        return None, None

    def _spawn(self, restore_file: Path | None, scratch: Path) -> subprocess.Popen:
        spec = self.config.workload
        mode = "application" if self.config.checkpointer == "application" else "transparent"
        # the workload module is stdlib-only, so running it by path keeps
        # child startup fast (no package import)
        argv = [
            sys.executable, workload.__file__,
            "--stages", workload.format_stages(spec.stages),
            "--seed", str(spec.seed),
            "--step-cost", str(spec.step_cost),
            "--scratch", str(scratch),
            "--mode", mode,
            "--progress-every", str(self.config.progress_every),
            "--exit-on-orphan",
        ]
        if restore_file is not None:
            argv += ["--restore", str(restore_file)]
        try:
            return subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # inherit; sys.stderr may be a captured pseudo-file
                text=True,
                bufsize=1,
                start_new_session=True,
            )
        except OSError as exc:
            raise RuntimeError(f"workload spawn failed: {exc}") from exc

    def _register_child(self, pid: int) -> None:
        if not (self.config.register_child and self.config.metadata_endpoint):
            return
        parsed = urlparse(self.config.metadata_endpoint)
        url = f"{parsed.scheme}://{parsed.netloc}/admin/register"
        try:
            requests.post(url, json={"pid": pid}, timeout=5)
        except requests.RequestException as exc:
            logger.warning("could not register child with mock: %s", exc)

    def _reader(self, proc: subprocess.Popen) -> None:
        for line in proc.stdout:
            self.events.put(("line", line.rstrip("\n")))
        proc.wait()
        self.events.put(("exit", proc.returncode))

    def _poller(self) -> None:
        session = requests.Session()
        while not self.stop_poller.wait(self.config.poll_interval):
            try:
                doc = eviction.poll(self.config.metadata_endpoint, session=session)
            except eviction.PollError as exc:
                logger.debug("poll failed (will retry): %s", exc)
                continue
            notice = eviction.detect_preempt(doc)
            if notice is not None:
                self.events.put(("notice", notice))

    def _ext_snapshot(self, pid: int, kind: str) -> None:
        try:
            payload = self.external.snapshot(pid)
            self.events.put(("ext_ckpt", (kind, payload)))
        except checkpoint.CheckpointFailed as exc:
            self.events.put(("ext_ckpt_fail", (kind, str(exc))))

    # -- the supervision loop ----------------------------------------------

    def run(self, restore_chain) -> RunOutcome:
        cfg = self.config
        store = Path(cfg.store_root)
        try:
            store.mkdir(parents=True, exist_ok=True)
            probe = store / ".writable"
            probe.touch()
            probe.unlink()
        except OSError as exc:
            logger.error("store root not writable: %s", exc)
            return RunOutcome("failed", RunLedger(tempfile.mkdtemp(prefix="spoton-lost-")))

        ledger = RunLedger(store)
        attempt = ledger.next_attempt_id()
        # events already acted on in earlier attempts never trigger again
        self.handled_event_ids.update(
            e["event_id"] for e in ledger.evictions() if e["event_id"]
        )

        with tempfile.TemporaryDirectory(prefix="spoton-scratch-") as scratch_str:
            scratch = Path(scratch_str)
            restored_from, restore_file = self._select_restore(restore_chain, scratch, ledger)
            ledger.record(
                "attempt_start",
                attempt=attempt,
                resumed_from=restored_from.sequence if restored_from else "none",
            )
            try:
                proc = self._spawn(restore_file, scratch)
            except RuntimeError as exc:
                ledger.record("attempt_end", attempt=attempt, reason="failed", error=str(exc))
                return RunOutcome("failed", ledger)
            self._register_child(proc.pid)

            threading.Thread(target=self._reader, args=(proc,), daemon=True).start()
            if cfg.polling_enabled:
                threading.Thread(target=self._poller, daemon=True).start()

            try:
                return self._loop(proc, ledger, attempt)
            finally:
                self.stop_poller.set()
                _stop_process(proc)

    def _loop(self, proc, ledger: RunLedger, attempt: int) -> RunOutcome:
        cfg = self.config
        ckpt_enabled = cfg.checkpointer != "none"
        now = time.monotonic()
        next_ckpt_due = now + cfg.checkpoint_interval
        inflight: dict | None = None
        # eviction handling state
        active_notice: eviction.EvictionNotice | None = None
        terminal_ckpt_ok = False
        stage_started = time.monotonic()
        current_stage: str | None = None
        last_marker = ("", 0)

        def finish_stage(now_mono: float) -> None:
            nonlocal stage_started
            if current_stage and current_stage != "END":
                ledger.record("stage_time", stage=current_stage, seconds=now_mono - stage_started)
            stage_started = now_mono

        def start_checkpoint(kind: str) -> None:
            nonlocal inflight
            inflight = {"kind": kind, "started": time.monotonic(), "marker": last_marker}
            ledger.record("ckpt_start", ckpt_kind=kind, stage=last_marker[0], step=last_marker[1])
            if self.external is not None:
                threading.Thread(
                    target=self._ext_snapshot, args=(proc.pid, kind), daemon=True
                ).start()
            else:
                try:
                    proc.stdin.write("CKPT-REQ\n")
                    proc.stdin.flush()
                except (BrokenPipeError, OSError):
                    pass  # child exiting; its exit event resolves the run

        def commit_payload(payload: bytes) -> bool:
            nonlocal inflight, next_ckpt_due
            kind = inflight["kind"]
            duration = time.monotonic() - inflight["started"]
            marker = inflight["marker"]
            inflight = None
            try:
                manifest = checkpoint.write_checkpoint(
                    payload,
                    kind=kind,
                    attempt_id=attempt,
                    stage_name=marker[0] or "?",
                    step_index=marker[1],
                    store_root=cfg.store_root,
                )
                checkpoint.prune(cfg.store_root)
            except checkpoint.StoreError as exc:
                logger.warning("checkpoint write failed: %s", exc)
                ledger.record(
                    "ckpt_end", seq=0, ckpt_kind=kind, ok=False,
                    duration=duration, stage=marker[0], step=marker[1], error=str(exc),
                )
                next_ckpt_due = schedule_next_checkpoint(
                    time.monotonic(), cfg.checkpoint_interval, time.monotonic()
                )
                return False
            self.max_observed_ckpt = max(self.max_observed_ckpt, duration)
            ledger.record(
                "ckpt_end", seq=manifest.sequence, ckpt_kind=kind, ok=True,
                duration=duration, stage=marker[0], step=marker[1],
            )
            next_ckpt_due = schedule_next_checkpoint(
                time.monotonic(), cfg.checkpoint_interval, time.monotonic()
            )
            return True

        def fail_checkpoint(message: str) -> None:
            nonlocal inflight
            kind = inflight["kind"]
            duration = time.monotonic() - inflight["started"]
            marker = inflight["marker"]
            inflight = None
            ledger.record(
                "ckpt_end", seq=0, ckpt_kind=kind, ok=False,
                duration=duration, stage=marker[0], step=marker[1], error=message,
            )

        def record_eviction(plan: ActionPlan, budget: float, ok: bool) -> None:
            ledger.record(
                "eviction",
                event_id=active_notice.event_id,
                notice_time=active_notice.detected_at,
                deadline=active_notice.deadline,
                budget=budget,
                action=plan.action,
                reason=plan.reason,
                termination_ckpt_ok=ok,
                below_floor=active_notice.below_floor,
            )

        def evicted_outcome(reason: str) -> RunOutcome:
            finish_stage(time.monotonic())
            ledger.record(
                "attempt_end", attempt=attempt, reason="evicted", detail=reason,
                stage=last_marker[0], step=last_marker[1],
            )
            return RunOutcome("evicted", ledger)

        eviction_plan: ActionPlan | None = None
        eviction_budget = 0.0

        while True:
            try:
                kind, payload = self.events.get(timeout=_TICK)
            except queue.Empty:
                kind, payload = "tick", None

            now_wall = time.time()
            now_mono = time.monotonic()

            if kind == "line":
                parts = payload.split()
                if not parts:
                    continue
                if parts[0] == "PROGRESS" and len(parts) == 3:
                    stage, step_idx = parts[1], int(parts[2])
                    if stage != current_stage:
                        finish_stage(now_mono)
                        current_stage = stage
                    last_marker = (stage, step_idx)
                elif parts[0] == "CKPT-OK" and len(parts) == 2 and inflight is not None:
                    try:
                        snap = Path(parts[1]).read_bytes()
                        Path(parts[1]).unlink(missing_ok=True)
                    except OSError as exc:
                        fail_checkpoint(f"snapshot unreadable: {exc}")
                        continue
                    ok = commit_payload(snap)
                    if active_notice is not None:
                        # this checkpoint (termination or awaited periodic) is terminal
                        terminal_ckpt_ok = ok
                        record_eviction(eviction_plan, eviction_budget, ok)
                        return evicted_outcome("terminal checkpoint done")
                elif parts[0] == "DONE" and len(parts) == 2:
                    finish_stage(now_mono)
                    ledger.record("attempt_end", attempt=attempt, reason="completed", digest=parts[1])
                    return RunOutcome("completed", ledger, digest=parts[1])

            elif kind == "ext_ckpt":
                ckpt_kind, data = payload
                if inflight is not None:
                    ok = commit_payload(data)
                    if active_notice is not None:
                        terminal_ckpt_ok = ok
                        record_eviction(eviction_plan, eviction_budget, ok)
                        return evicted_outcome("terminal checkpoint done")

            elif kind == "ext_ckpt_fail":
                ckpt_kind, message = payload
                if inflight is not None:
                    fail_checkpoint(message)
                    if active_notice is not None:
                        record_eviction(eviction_plan, eviction_budget, False)
                        return evicted_outcome("terminal checkpoint failed")

            elif kind == "exit":
                rc = payload
                if inflight is not None:
                    fail_checkpoint(f"child exited ({rc}) mid-checkpoint")
                if active_notice is not None:
                    record_eviction(eviction_plan, eviction_budget, terminal_ckpt_ok)
                    return evicted_outcome(f"child gone (exit {rc}) during eviction handling")
                if rc is not None and rc < 0:
                    # killed without any detected notice: the missed-notice path
                    ledger.record(
                        "attempt_end", attempt=attempt, reason="evicted",
                        detail=f"killed_signal_{-rc}", stage=last_marker[0], step=last_marker[1],
                    )
                    return RunOutcome("evicted", ledger)
                ledger.record("attempt_end", attempt=attempt, reason="failed", detail=f"exit_{rc}")
                return RunOutcome("failed", ledger)

            elif kind == "notice":
                notice: eviction.EvictionNotice = payload
                if notice.event_id in self.handled_event_ids or active_notice is not None:
                    continue
                self.handled_event_ids.add(notice.event_id)
                budget = eviction.notice_budget(notice, now_wall, floor=cfg.min_notice_floor)
                plan = on_eviction_notice(
                    notice, inflight is not None, self.snapshot_estimate(),
                    now_wall, cfg.safety_factor,
                )
                active_notice, eviction_plan, eviction_budget = notice, plan, budget
                logger.info("eviction notice %s: %s (%s)", notice.event_id, plan.action, plan.reason)
                if plan.action == ACTION_STOP:
                    record_eviction(plan, budget, False)
                    return evicted_outcome("insufficient budget for termination checkpoint")
                if plan.action == ACTION_TERMINATION_CKPT:
                    start_checkpoint("termination")
                # ACTION_IGNORE: in-flight checkpoint will close the run

            # timer work on every iteration
            if active_notice is not None and now_wall >= active_notice.deadline:
                # deadline passed while waiting on a (termination or in-flight) checkpoint
                if inflight is not None:
                    fail_checkpoint("eviction deadline passed")
                record_eviction(eviction_plan, eviction_budget, terminal_ckpt_ok)
                return evicted_outcome("deadline reached")

            if (
                ckpt_enabled
                and active_notice is None
                and inflight is None
                and now_mono >= next_ckpt_due
            ):
                start_checkpoint("periodic")


def _stop_process(proc: subprocess.Popen) -> None:
    if proc.poll() is not None:
        return
    try:
        proc.terminate()
        try:
            proc.wait(timeout=_STOP_GRACE)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=_STOP_GRACE)
    except (ProcessLookupError, OSError):
        pass
