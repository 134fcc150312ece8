"""Deterministic, checkpointable staged toy workload.

The workload is a fixed sequence of named stages, each a loop of
hash-chained steps.  Its state is four integers, so it can be snapshotted
at any step, and the final digest depends only on (stages, seed) -- never
on wall time, busy-work calibration, or how often it was checkpointed and
restored.

The mixing function is a splitmix64-style finalizer (multiply-xor-shift
with fixed constants), chosen so any independent implementation agrees
bit-for-bit:

    mix64(x): x ^= x >> 30; x *= 0xBF58476D1CE4E5B9
              x ^= x >> 27; x *= 0x94D049BB133111EB
              x ^= x >> 31            (all mod 2**64)

    acc_0   = mix64(seed)
    acc_n+1 = mix64(acc_n ^ mix64(seed + stage_index * 0x9E3779B97F4A7C15
                                       + step_index * 0xD1B54A32D192ED03))

Run as a child process (``python -m spoton.workload``) it speaks a line
protocol on its standard streams:

    stdout:  PROGRESS <stage_name> <step_index>
             CKPT-OK <path>
             DONE <digest>
    stdin:   CKPT-REQ

``CKPT-REQ`` asks for a state snapshot; in transparent mode it is served
between the next two steps, in application mode only at the next stage
boundary.  EOF on stdin means the supervisor is gone and the child exits.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import queue
import struct
import sys
import threading
import time

MASK64 = (1 << 64) - 1

_STAGE_SALT = 0x9E3779B97F4A7C15
_STEP_SALT = 0xD1B54A32D192ED03

DEFAULT_STAGES = [("K33", 200), ("K55", 200), ("K77", 200), ("K99", 200), ("K127", 200)]

_MAGIC = b"SPOTWL1\x00"


def mix64(x: int) -> int:
    """64-bit multiply-xor-shift finalizer (splitmix64 constants)."""
    x &= MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & MASK64
    x ^= x >> 31
    return x


@dataclasses.dataclass(frozen=True)
class WorkloadSpec:
    """What to run: ordered (name, step_count) stages plus a seed.

    ``step_cost`` is busy-work per step (extra mix64 iterations) used to
    calibrate wall time; it never affects computed values.
    """

    stages: tuple[tuple[str, int], ...] = tuple(DEFAULT_STAGES)
    seed: int = 0
    step_cost: int = 0

    def __post_init__(self):
        names = [n for n, _ in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("stage names must be unique")
        if any(c < 0 for _, c in self.stages):
            raise ValueError("step counts must be >= 0")

    @property
    def total_steps(self) -> int:
        return sum(c for _, c in self.stages)


@dataclasses.dataclass(frozen=True)
class WorkloadState:
    stage_index: int
    step_index: int
    accumulator: int
    seed: int


def initial_state(spec: WorkloadSpec) -> WorkloadState:
    return _skip_empty(spec, WorkloadState(0, 0, mix64(spec.seed), spec.seed))


def _skip_empty(spec: WorkloadSpec, state: WorkloadState) -> WorkloadState:
    """Advance past zero-step stages so (stage, step) always points at work or the end."""
    si = state.stage_index
    while si < len(spec.stages) and spec.stages[si][1] == 0:
        si += 1
    if si != state.stage_index:
        state = dataclasses.replace(state, stage_index=si, step_index=0)
    return state


def is_finished(spec: WorkloadSpec, state: WorkloadState) -> bool:
    return state.stage_index >= len(spec.stages)


def step(spec: WorkloadSpec, state: WorkloadState) -> WorkloadState:
    """Advance one hash-chained step.  Pure; raises if already finished."""
    if is_finished(spec, state):
        raise ValueError("cannot step a finished workload")
    salt = mix64(
        (state.seed + state.stage_index * _STAGE_SALT + state.step_index * _STEP_SALT)
        & MASK64
    )
    acc = mix64(state.accumulator ^ salt)
    si, pi = state.stage_index, state.step_index + 1
    if pi >= spec.stages[si][1]:
        si, pi = si + 1, 0
    return _skip_empty(spec, WorkloadState(si, pi, acc, state.seed))


def at_stage_boundary(state: WorkloadState) -> bool:
    """True at the start of a stage and at the end of the run."""
    return state.step_index == 0


def digest(spec: WorkloadSpec, state: WorkloadState) -> str:
    """Final digest: 16 lowercase hex digits of the accumulator.  Only at end."""
    if not is_finished(spec, state):
        raise ValueError("digest of unfinished workload")
    return format(state.accumulator, "016x")


def reference_digest(spec: WorkloadSpec) -> str:
    """Digest of an uninterrupted run, computed directly (no busy-work)."""
    state = initial_state(spec)
    while not is_finished(spec, state):
        state = step(spec, state)
    return digest(spec, state)


# ---------------------------------------------------------------------------
# Serialization: versioned binary format with a magic header.
# Layout: magic(8) | seed(8) | n_stages(2) | per stage: name_len(1) name
# step_count(4) | stage_index(4) | step_index(4) | accumulator(8)
# ---------------------------------------------------------------------------


class PayloadError(ValueError):
    """Payload is not a valid serialized workload state for this spec."""


def serialize(spec: WorkloadSpec, state: WorkloadState) -> bytes:
    out = [_MAGIC, struct.pack("<Q", spec.seed & MASK64), struct.pack("<H", len(spec.stages))]
    for name, count in spec.stages:
        raw = name.encode()
        out.append(struct.pack("<B", len(raw)) + raw + struct.pack("<I", count))
    out.append(struct.pack("<IIQ", state.stage_index, state.step_index, state.accumulator))
    return b"".join(out)


def deserialize(payload: bytes, spec: WorkloadSpec) -> WorkloadState:
    view = memoryview(payload)

    def take(n: int) -> memoryview:
        nonlocal view
        if len(view) < n:
            raise PayloadError("truncated payload")
        chunk, view = view[:n], view[n:]
        return chunk

    if bytes(take(8)) != _MAGIC:
        raise PayloadError("bad magic / unsupported version")
    (seed,) = struct.unpack("<Q", take(8))
    (n_stages,) = struct.unpack("<H", take(2))
    stages = []
    for _ in range(n_stages):
        (name_len,) = struct.unpack("<B", take(1))
        name = bytes(take(name_len)).decode()
        (count,) = struct.unpack("<I", take(4))
        stages.append((name, count))
    si, pi, acc = struct.unpack("<IIQ", take(16))
    if len(view) != 0:
        raise PayloadError("trailing bytes after payload")
    if tuple(stages) != spec.stages:
        raise PayloadError("payload belongs to a different workload spec")
    if seed != spec.seed & MASK64:
        raise PayloadError("payload belongs to a different seed")
    if si > len(stages) or (si < len(stages) and pi >= max(stages[si][1], 1)):
        raise PayloadError("state out of bounds")
    return WorkloadState(si, pi, acc, spec.seed)


# ---------------------------------------------------------------------------
# Busy-work calibration.  Correctness never depends on this: the burn
# result is folded into a throwaway value.
# ---------------------------------------------------------------------------


def burn(iterations: int) -> int:
    v = 0x1234
    for _ in range(iterations):
        v = mix64(v)
    return v


def calibrate_step_cost(target_step_seconds: float, probe: int = 200_000) -> int:
    """Pick a step_cost so one step takes roughly target_step_seconds."""
    t0 = time.perf_counter()
    burn(probe)
    per_iter = (time.perf_counter() - t0) / probe
    return max(int(target_step_seconds / per_iter), 0)


# ---------------------------------------------------------------------------
# Spec <-> text (for config files / argv)
# ---------------------------------------------------------------------------


def parse_stages(text: str) -> tuple[tuple[str, int], ...]:
    """Parse 'K33:200,K55:200' into ((name, count), ...)."""
    stages = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, count = part.partition(":")
        if not count:
            raise ValueError(f"stage {part!r} missing ':count'")
        stages.append((name.strip(), int(count)))
    return tuple(stages)


def format_stages(stages) -> str:
    return ",".join(f"{name}:{count}" for name, count in stages)


# ---------------------------------------------------------------------------
# Child-process entry point (line protocol)
# ---------------------------------------------------------------------------


def _stdin_reader(q: queue.Queue) -> None:
    for line in sys.stdin:
        q.put(line.strip())
    q.put(None)  # EOF: supervisor is gone


def _emit(text: str) -> None:
    sys.stdout.write(text + "\n")
    sys.stdout.flush()


def child_main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="spoton.workload")
    ap.add_argument("--stages", default=format_stages(DEFAULT_STAGES))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--step-cost", type=int, default=0)
    ap.add_argument("--restore", default=None, help="path to a serialized state")
    ap.add_argument("--scratch", default=".", help="directory for snapshot files")
    ap.add_argument("--mode", choices=["transparent", "application"], default="transparent")
    ap.add_argument("--progress-every", type=int, default=1)
    ap.add_argument("--exit-on-orphan", action="store_true",
                    help="exit when stdin closes (the supervisor died)")
    args = ap.parse_args(argv)

    spec = WorkloadSpec(parse_stages(args.stages), args.seed, args.step_cost)
    if args.restore:
        try:
            with open(args.restore, "rb") as fh:
                state = deserialize(fh.read(), spec)
        except (OSError, PayloadError) as exc:
            print(f"restore failed: {exc}", file=sys.stderr)
            return 3
    else:
        state = initial_state(spec)

    commands: queue.Queue = queue.Queue()
    threading.Thread(target=_stdin_reader, args=(commands,), daemon=True).start()

    snap_counter = 0
    ckpt_pending = False
    done_steps = 0

    def take_snapshot() -> None:
        nonlocal snap_counter, ckpt_pending
        snap_counter += 1
        path = os.path.join(args.scratch, f"snap-{os.getpid()}-{snap_counter}.bin")
        with open(path, "wb") as fh:
            fh.write(serialize(spec, state))
            fh.flush()
            os.fsync(fh.fileno())
        ckpt_pending = False
        _emit(f"CKPT-OK {path}")

    _emit(f"PROGRESS {_stage_name(spec, state)} {state.step_index}")
    while not is_finished(spec, state):
        while True:
            try:
                cmd = commands.get_nowait()
            except queue.Empty:
                break
            if cmd is None:
                if args.exit_on_orphan:
                    return 3  # stdin closed: supervisor died
                break
            if cmd == "CKPT-REQ":
                ckpt_pending = True
        if ckpt_pending and (args.mode == "transparent" or at_stage_boundary(state)):
            take_snapshot()
        if args.step_cost:
            burn(args.step_cost)
        state = step(spec, state)
        done_steps += 1
        if done_steps % args.progress_every == 0 or at_stage_boundary(state):
            _emit(f"PROGRESS {_stage_name(spec, state)} {state.step_index}")

    if ckpt_pending:  # end of run is a stage boundary in both modes
        take_snapshot()
    _emit(f"DONE {digest(spec, state)}")
    return 0


def _stage_name(spec: WorkloadSpec, state: WorkloadState) -> str:
    if is_finished(spec, state):
        return "END"
    return spec.stages[state.stage_index][0]


if __name__ == "__main__":
    sys.exit(child_main())
