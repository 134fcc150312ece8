"""Brute-force 1-second-granularity replay of a checkpointed run.

Independent of the event-driven simulator: advances one integer second at
a time, keeping explicit working / checkpointing / down phases.  Shares
the tie-breaking conventions (instant ordering at each tick: checkpoint
completion, then run completion, then eviction, then resume, then
checkpoint start).  All parameters must be integers.
"""

import math


class OracleNonconvergence(Exception):
    pass


def replay(stage_durations, policy, tau=None, c=0, r=0, p=0, E=math.inf, horizon_factor=100):
    total = sum(stage_durations)
    if total == 0:
        return {"makespan": 0, "evictions": 0, "checkpoints": 0, "lost_work": 0}
    boundaries = set()
    acc = 0
    for d in stage_durations[:-1]:
        acc += d
        boundaries.add(acc)
    horizon = horizon_factor * total

    t = 0
    committed = 0
    progress = 0
    since_ckpt = 0
    ckpt_left = None  # None = not checkpointing
    down_left = None  # None = instance up
    evictions = 0
    checkpoints = 0
    lost = 0

    while True:
        # 1. checkpoint completion
        if ckpt_left == 0:
            committed = progress
            since_ckpt = 0
            checkpoints += 1
            ckpt_left = None
        # 2. run completion
        if ckpt_left is None and down_left is None and progress == total:
            return {
                "makespan": t,
                "evictions": evictions,
                "checkpoints": checkpoints,
                "lost_work": lost,
            }
        # 3. eviction
        if down_left is None and not math.isinf(E) and t > 0 and t % E == 0:
            evictions += 1
            lost += progress - committed
            ckpt_left = None
            down_left = p + r
        # 4. resume
        if down_left == 0:
            down_left = None
            progress = committed
            since_ckpt = 0
        # 5. checkpoint start (a zero-cost checkpoint commits at this same tick)
        if ckpt_left is None and down_left is None:
            due = (policy == "periodic" and since_ckpt == tau) or (
                policy == "boundary_only" and progress in boundaries and progress > committed
            )
            if due:
                if c == 0:
                    committed = progress
                    since_ckpt = 0
                    checkpoints += 1
                else:
                    ckpt_left = c
        # advance one second
        if down_left is not None:
            down_left -= 1
        elif ckpt_left is not None:
            ckpt_left -= 1
        else:
            progress += 1
            since_ckpt += 1
        t += 1
        if t > horizon:
            raise OracleNonconvergence(f"no completion by t={t}")
