"""Durable checkpoint store and checkpointer plugins.

Store layout (under a store root any attempt can see -- the stand-in for
NFS/blob shared storage):

    <store_root>/ckpt/<seq>/payload.bin   opaque snapshot bytes
    <store_root>/ckpt/<seq>/manifest      'key = value' lines
    <store_root>/ckpt/<seq>/COMMIT        empty file; existence = committed

Writes are two-phase: payload first (fsynced), manifest + COMMIT second,
so a crash at any point leaves either the previous latest checkpoint or
the new one visible -- never a torn one.

The payload checksum is FNV-1a 64-bit (offset basis 0xcbf29ce484222325,
prime 0x100000001b3): corruption detection, not security.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import shlex
import shutil
import subprocess
import tarfile
import tempfile
import time
from pathlib import Path

from . import workload

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


class StoreError(OSError):
    """Checkpoint could not be durably written."""


@dataclasses.dataclass
class CheckpointManifest:
    sequence: int
    kind: str  # periodic | termination
    attempt_id: int
    stage_name: str
    step_index: int
    payload_size: int
    checksum: int
    created_at: float
    complete: bool = False

    def to_text(self) -> str:
        lines = [
            f"sequence = {self.sequence}",
            f"kind = {self.kind}",
            f"attempt_id = {self.attempt_id}",
            f"stage_name = {self.stage_name}",
            f"step_index = {self.step_index}",
            f"payload_size = {self.payload_size}",
            f"checksum = {self.checksum:016x}",
            f"created_at = {self.created_at!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CheckpointManifest":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad manifest line: {line!r}")
            fields[key.strip()] = value.strip()
        return cls(
            sequence=int(fields["sequence"]),
            kind=fields["kind"],
            attempt_id=int(fields["attempt_id"]),
            stage_name=fields["stage_name"],
            step_index=int(fields["step_index"]),
            payload_size=int(fields["payload_size"]),
            checksum=int(fields["checksum"], 16),
            created_at=float(fields["created_at"]),
        )


def _ckpt_dir(store_root) -> Path:
    return Path(store_root) / "ckpt"


def _seq_dirs(store_root):
    base = _ckpt_dir(store_root)
    if not base.is_dir():
        return []
    out = []
    for entry in base.iterdir():
        if entry.is_dir() and entry.name.isdigit():
            out.append((int(entry.name), entry))
    return sorted(out)


def next_sequence(store_root) -> int:
    dirs = _seq_dirs(store_root)
    return (dirs[-1][0] + 1) if dirs else 1


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


# Named steps of the two-phase write, in order.  Fault-injection tests cut
# the sequence after any step; latest_valid must never see a torn result.
WRITE_STEPS = ("mkdir", "payload", "payload_fsync", "manifest", "manifest_fsync", "commit", "commit_fsync")


def write_checkpoint(
    payload: bytes,
    *,
    kind: str,
    attempt_id: int,
    stage_name: str,
    step_index: int,
    store_root,
    fail_after: str | None = None,
) -> CheckpointManifest:
    """Two-phase commit of one checkpoint; returns the committed manifest.

    ``fail_after`` names a WRITE_STEPS entry after which a simulated crash
    (StoreError) is raised; used by fault-injection tests only.
    """
    seq = next_sequence(store_root)
    manifest = CheckpointManifest(
        sequence=seq,
        kind=kind,
        attempt_id=attempt_id,
        stage_name=stage_name,
        step_index=step_index,
        payload_size=len(payload),
        checksum=fnv1a64(payload),
        created_at=time.time(),
    )
    target = _ckpt_dir(store_root) / str(seq)

    def crash_point(step_name: str) -> None:
        if fail_after == step_name:
            raise StoreError(f"simulated crash after {step_name}")

    try:
        target.mkdir(parents=True, exist_ok=False)
        crash_point("mkdir")
        payload_path = target / "payload.bin"
        with open(payload_path, "wb") as fh:
            fh.write(payload)
            crash_point("payload")
            fh.flush()
            os.fsync(fh.fileno())
        crash_point("payload_fsync")
        manifest_path = target / "manifest"
        with open(manifest_path, "w") as fh:
            fh.write(manifest.to_text())
            crash_point("manifest")
            fh.flush()
            os.fsync(fh.fileno())
        crash_point("manifest_fsync")
        commit_path = target / "COMMIT"
        commit_path.touch()
        crash_point("commit")
        _fsync_dir(target)
        crash_point("commit_fsync")
    except StoreError:
        raise
    except OSError as exc:
        raise StoreError(f"checkpoint write failed: {exc}") from exc
    manifest.complete = True
    return manifest


def read_manifest(seq_dir: Path) -> CheckpointManifest | None:
    try:
        manifest = CheckpointManifest.from_text((seq_dir / "manifest").read_text())
    except (OSError, ValueError, KeyError) as exc:
        logger.debug("skipping unreadable manifest in %s: %s", seq_dir, exc)
        return None
    manifest.complete = (seq_dir / "COMMIT").exists()
    return manifest


def validate(manifest: CheckpointManifest, store_root) -> bool:
    """True iff commit marker present, payload exists, size and checksum match."""
    seq_dir = _ckpt_dir(store_root) / str(manifest.sequence)
    if not (seq_dir / "COMMIT").exists():
        return False
    try:
        payload = (seq_dir / "payload.bin").read_bytes()
    except OSError:
        return False
    return len(payload) == manifest.payload_size and fnv1a64(payload) == manifest.checksum


def valid_manifests(store_root) -> list[CheckpointManifest]:
    """Committed, integrity-verified manifests, newest (highest seq) first."""
    out = []
    for _, seq_dir in reversed(_seq_dirs(store_root)):
        manifest = read_manifest(seq_dir)
        if manifest is not None and validate(manifest, store_root):
            out.append(manifest)
    return out


def latest_valid(store_root) -> CheckpointManifest | None:
    found = valid_manifests(store_root)
    return found[0] if found else None


def read_payload(manifest: CheckpointManifest, store_root) -> bytes:
    return (_ckpt_dir(store_root) / str(manifest.sequence) / "payload.bin").read_bytes()


def prune(store_root, keep: int = 2) -> None:
    """Delete all but the newest ``keep`` valid checkpoints (and torn leftovers older than them)."""
    valid = valid_manifests(store_root)
    if len(valid) <= keep:
        return
    cutoff = valid[keep - 1].sequence
    for seq, seq_dir in _seq_dirs(store_root):
        if seq < cutoff:
            shutil.rmtree(seq_dir, ignore_errors=True)


# ---------------------------------------------------------------------------
# Checkpointer plugins
# ---------------------------------------------------------------------------


class CheckpointFailed(RuntimeError):
    pass


class ToyCheckpointer:
    """Transparent-style checkpointer for the toy workload: any step is a safe point."""

    kind = "toy"

    def __init__(self, spec: workload.WorkloadSpec, estimate_seconds: float = 0.1):
        self.spec = spec
        self._estimate = estimate_seconds

    def can_checkpoint_now(self, state: workload.WorkloadState) -> bool:
        return True

    def snapshot(self, state: workload.WorkloadState) -> bytes:
        return workload.serialize(self.spec, state)

    def restore(self, payload: bytes) -> workload.WorkloadState:
        return workload.deserialize(payload, self.spec)

    def estimate(self) -> float:
        return self._estimate


class ApplicationCheckpointer(ToyCheckpointer):
    """Application-native checkpointer: snapshots only at stage boundaries."""

    kind = "application"

    def can_checkpoint_now(self, state: workload.WorkloadState) -> bool:
        return workload.at_stage_boundary(state)

    def snapshot(self, state: workload.WorkloadState) -> bytes:
        if not self.can_checkpoint_now(state):
            raise CheckpointFailed("application checkpoint only at stage boundaries")
        return super().snapshot(state)


class ExternalCheckpointer:
    """Checkpointer backed by external snapshot/restore commands (CRIU-style).

    Command templates may contain ``{pid}`` and ``{dir}`` placeholders.
    ``snapshot`` runs the command against a live process and packages the
    output directory as a tar payload; ``restore`` unpacks a payload and
    runs the restore command against the unpacked directory.  Nonzero exit
    status raises CheckpointFailed.
    """

    kind = "transparent"

    def __init__(self, snapshot_cmd: str, restore_cmd: str, estimate_seconds: float = 1.0, timeout: float = 120.0):
        self.snapshot_cmd = snapshot_cmd
        self.restore_cmd = restore_cmd
        self._estimate = estimate_seconds
        self.timeout = timeout

    def can_checkpoint_now(self, state) -> bool:
        return True

    def estimate(self) -> float:
        return self._estimate

    def _run(self, template: str, pid: int | None, directory: str) -> None:
        cmd = [part.format(pid=pid, dir=directory) for part in shlex.split(template)]
        proc = subprocess.run(cmd, timeout=self.timeout, capture_output=True, text=True)
        if proc.returncode != 0:
            raise CheckpointFailed(
                f"{cmd[0]} exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )

    def snapshot(self, pid: int) -> bytes:
        with tempfile.TemporaryDirectory(prefix="spoton-ext-") as tmp:
            self._run(self.snapshot_cmd, pid, tmp)
            buf = tempfile.SpooledTemporaryFile()
            with tarfile.open(fileobj=buf, mode="w") as tar:
                tar.add(tmp, arcname=".")
            buf.seek(0)
            return buf.read()

    def restore(self, payload: bytes, into_dir: str) -> None:
        os.makedirs(into_dir, exist_ok=True)
        with tempfile.TemporaryFile() as buf:
            buf.write(payload)
            buf.seek(0)
            with tarfile.open(fileobj=buf, mode="r") as tar:
                tar.extractall(into_dir, filter="data")
        self._run(self.restore_cmd, None, into_dir)
