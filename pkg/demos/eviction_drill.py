"""Walk through one eviction drill end to end.

Starts the loopback metadata mock, supervises a small deterministic
workload while the mock schedules a preemption, then resumes from the
committed checkpoint and verifies the final digest is bit-identical to
an eviction-free run.

    python3 demos/eviction_drill.py
"""

import tempfile
from pathlib import Path

from spoton import coordinator, workload
from spoton.cloudmock import MockServer
from spoton.config import CoordinatorConfig


def main():
    spec = workload.WorkloadSpec(
        stages=(("K33", 120), ("K55", 120), ("K77", 120)),
        seed=42,
        step_cost=workload.calibrate_step_cost(0.01),
    )
    reference = workload.reference_digest(spec)
    print(f"workload: {workload.format_stages(spec.stages)} seed={spec.seed}")
    print(f"eviction-free reference digest: {reference}\n")

    store = Path(tempfile.mkdtemp(prefix="drill-store-"))
    with MockServer(min_notice=1.0, kill=False) as server:
        config = CoordinatorConfig(
            workload=spec,
            store_root=store,
            checkpointer="toy",
            checkpoint_interval=0.5,
            snapshot_time_estimate=0.05,
            metadata_endpoint=server.endpoint,
            poll_interval=0.1,
            min_notice_floor=1.0,
        )
        print(f"metadata endpoint: {server.endpoint}")
        print("scheduling a preemption 1.2s in, with 1.5s of notice\n")
        server.schedule_evictions([(1.2, 1.5)])

        outcome = coordinator.run(config)
        print(f"first attempt: {outcome.status}")
        for ev in outcome.ledger.evictions():
            print(f"  notice {ev['event_id'][:8]} budget={ev['budget']:.2f}s "
                  f"-> {ev['action']} (terminal checkpoint ok: {ev['termination_ckpt_ok']})")
        for ck in outcome.ledger.checkpoints():
            print(f"  checkpoint seq={ck['sequence']} kind={ck['kind']} "
                  f"at {ck['stage']}[{ck['step']}] ok={ck['ok']}")

        outcome = coordinator.resume(config)
        print(f"\nresumed attempt: {outcome.status}")
        print(f"final digest: {outcome.digest}")
        print("bit-identical to reference:", outcome.digest == reference)


if __name__ == "__main__":
    main()
