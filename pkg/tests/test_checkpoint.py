import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoton import checkpoint, workload
from spoton.checkpoint import (
    ApplicationCheckpointer,
    CheckpointFailed,
    ExternalCheckpointer,
    StoreError,
    ToyCheckpointer,
    WRITE_STEPS,
    fnv1a64,
    latest_valid,
    prune,
    validate,
    write_checkpoint,
)


def put(store, payload=b"data", kind="periodic", **kw):
    meta = dict(kind=kind, attempt_id=1, stage_name="A", step_index=0)
    meta.update(kw)
    return write_checkpoint(payload, store_root=store, **meta)


class TestWriteAndSelect:
    def test_first_checkpoint_gets_sequence_1(self, tmp_path):
        manifest = put(tmp_path)
        assert manifest.sequence == 1
        assert manifest.complete
        assert validate(manifest, tmp_path)

    def test_sequence_is_monotonic_across_kinds(self, tmp_path):
        for _ in range(4):
            put(tmp_path)
        manifest = put(tmp_path, kind="termination")
        assert manifest.sequence == 5
        assert manifest.kind == "termination"

    def test_latest_valid_skips_incomplete(self, tmp_path):
        put(tmp_path, b"one")
        put(tmp_path, b"two")
        with pytest.raises(StoreError):
            put(tmp_path, b"three", fail_after="payload_fsync")  # no COMMIT written
        best = latest_valid(tmp_path)
        assert best.sequence == 2

    def test_latest_valid_empty_store(self, tmp_path):
        assert latest_valid(tmp_path) is None

    def test_latest_valid_skips_checksum_mismatch(self, tmp_path):
        put(tmp_path, b"one")
        m2 = put(tmp_path, b"two")
        payload_path = tmp_path / "ckpt" / str(m2.sequence) / "payload.bin"
        payload_path.write_bytes(b"tWo")
        assert latest_valid(tmp_path).sequence == 1

    def test_single_flipped_byte_invalidates(self, tmp_path):
        manifest = put(tmp_path, b"payload-bytes")
        path = tmp_path / "ckpt" / "1" / "payload.bin"
        raw = bytearray(path.read_bytes())
        raw[5] ^= 0x01
        path.write_bytes(bytes(raw))
        assert not validate(manifest, tmp_path)

    def test_missing_commit_marker_invalidates(self, tmp_path):
        manifest = put(tmp_path)
        os.unlink(tmp_path / "ckpt" / "1" / "COMMIT")
        assert not validate(manifest, tmp_path)

    def test_foreign_files_ignored(self, tmp_path):
        put(tmp_path, b"real")
        (tmp_path / "ckpt" / "notes.txt").write_text("garbage")
        (tmp_path / "ckpt" / "weird-dir").mkdir()
        (tmp_path / "ckpt" / "99x").mkdir()
        assert latest_valid(tmp_path).sequence == 1

    def test_manifest_round_trips_through_text(self, tmp_path):
        manifest = put(tmp_path, b"abc", kind="termination", stage_name="K55", step_index=17)
        reread = checkpoint.read_manifest(tmp_path / "ckpt" / "1")
        assert reread == manifest

    def test_unreadable_manifest_skipped_not_fatal(self, tmp_path):
        put(tmp_path, b"one")
        put(tmp_path, b"two")
        (tmp_path / "ckpt" / "2" / "manifest").write_text("mangled ###")
        assert latest_valid(tmp_path).sequence == 1


class TestCrashAtomicity:
    @pytest.mark.parametrize("fail_after", WRITE_STEPS)
    def test_any_prefix_leaves_previous_latest(self, tmp_path, fail_after):
        prev = put(tmp_path, b"stable")
        try:
            put(tmp_path, b"next", fail_after=fail_after)
            crashed = False
        except StoreError:
            crashed = True
        best = latest_valid(tmp_path)
        assert best is not None
        if crashed and fail_after not in ("commit", "commit_fsync"):
            assert best.sequence == prev.sequence
        # once COMMIT exists the new checkpoint may be visible; either way
        # whatever is returned must verify
        assert validate(best, tmp_path)

    def test_retry_after_crash_uses_fresh_sequence(self, tmp_path):
        put(tmp_path, b"one")
        with pytest.raises(StoreError):
            put(tmp_path, b"torn", fail_after="payload")
        manifest = put(tmp_path, b"two")
        assert manifest.sequence == 3  # torn dir 2 is never reused
        assert latest_valid(tmp_path).sequence == 3


class TestRetention:
    def test_prune_keeps_last_two_valid(self, tmp_path):
        for i in range(5):
            put(tmp_path, f"p{i}".encode())
        prune(tmp_path, keep=2)
        remaining = sorted(int(d.name) for d in (tmp_path / "ckpt").iterdir())
        assert remaining == [4, 5]

    def test_prune_noop_below_threshold(self, tmp_path):
        put(tmp_path)
        prune(tmp_path, keep=2)
        assert latest_valid(tmp_path).sequence == 1


class TestToyCheckpointers:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.integers(0, 60))
    def test_round_trip_restore_at_random_positions(self, seed, steps):
        spec = workload.WorkloadSpec(stages=(("A", 30), ("B", 31)), seed=seed)
        state = workload.initial_state(spec)
        for _ in range(min(steps, spec.total_steps)):
            state = workload.step(spec, state)
        toy = ToyCheckpointer(spec)
        assert toy.restore(toy.snapshot(state)) == state
        assert toy.can_checkpoint_now(state)

    def test_application_checkpointer_only_at_boundaries(self):
        spec = workload.WorkloadSpec(stages=(("A", 10),), seed=1)
        app = ApplicationCheckpointer(spec)
        state = workload.initial_state(spec)
        assert app.can_checkpoint_now(state)
        mid = workload.step(spec, state)
        assert not app.can_checkpoint_now(mid)
        with pytest.raises(CheckpointFailed):
            app.snapshot(mid)


class TestExternalCheckpointer:
    def test_stub_snapshot_and_restore_round_trip(self, tmp_path):
        ext = ExternalCheckpointer(
            snapshot_cmd="sh -c 'echo_pid_{pid} > /dev/null; printf hello > {dir}/state.bin'",
            restore_cmd="sh -c 'test -f {dir}/state.bin'",
        )
        payload = ext.snapshot(os.getpid())
        out = tmp_path / "restored"
        ext.restore(payload, str(out))
        assert (out / "state.bin").read_bytes() == b"hello"

    def test_snapshot_failure_propagates(self):
        ext = ExternalCheckpointer(snapshot_cmd="false", restore_cmd="true")
        with pytest.raises(CheckpointFailed):
            ext.snapshot(os.getpid())

    def test_restore_failure_propagates(self, tmp_path):
        ext = ExternalCheckpointer(
            snapshot_cmd="sh -c 'printf x > {dir}/state.bin'", restore_cmd="false"
        )
        payload = ext.snapshot(os.getpid())
        with pytest.raises(CheckpointFailed):
            ext.restore(payload, str(tmp_path / "r"))


def test_fnv1a64_known_vectors():
    # standard FNV-1a 64 test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8
