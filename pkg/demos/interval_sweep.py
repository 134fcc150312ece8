"""Sweep checkpoint period against eviction pressure.

For a five-stage workload, simulates makespan under periodic
checkpointing across a range of checkpoint periods and eviction
intervals, and contrasts the boundary-only policy.  Shows the tradeoff:
short periods pay overhead on every checkpoint, long periods lose more
work per eviction, and boundary-only cannot complete at all once a
stage outlasts the eviction interval.

    python3 demos/interval_sweep.py
"""

from spoton.spotsim import (
    BOUNDARY_ONLY,
    PERIODIC,
    NonconvergenceError,
    SimParams,
    format_hms,
    simulate,
)

STAGES = (2030.0, 2333.0, 2391.0, 2419.0, 1833.0)  # ~3h of staged work
OVERHEAD = dict(checkpoint_overhead=60.0, restore_time=60.0, reprovision_delay=120.0)


def main():
    periods = [300.0, 600.0, 900.0, 1800.0, 3600.0]
    intervals = [3600.0, 5400.0, 10800.0]

    header = "eviction interval".ljust(20) + "".join(f"tau={p:>6.0f}s" for p in periods)
    print(header + "  boundary-only")
    for interval in intervals:
        cells = []
        for period in periods:
            try:
                res = simulate(SimParams(STAGES, PERIODIC, period,
                                         eviction_interval=interval, **OVERHEAD))
                cells.append(format_hms(res.makespan).rjust(10))
            except NonconvergenceError:
                # e.g. a period phase-locked to the eviction interval:
                # every checkpoint is cut down right before it commits
                cells.append("never".rjust(10))
        try:
            boundary = simulate(SimParams(
                STAGES, BOUNDARY_ONLY, None,
                checkpoint_overhead=480.0, restore_time=60.0,
                reprovision_delay=120.0, eviction_interval=interval))
            b_cell = format_hms(boundary.makespan).rjust(13)
        except NonconvergenceError:
            b_cell = "never".rjust(13)
        label = f"every {format_hms(interval)}"
        print(label.ljust(20) + "".join(cells) + b_cell)

    print("\nuninterrupted: " + format_hms(sum(STAGES)))


if __name__ == "__main__":
    main()
