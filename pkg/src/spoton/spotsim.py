"""Makespan and cost model for checkpointed work on preemptible instances.

``simulate`` replays a staged workload under periodic evictions as a
deterministic event-driven process: work progresses 1:1 with wall time,
checkpoints commit at policy points (costing ``checkpoint_overhead``
each), an eviction at every multiple of ``eviction_interval`` discards
progress past the last committed checkpoint, and each resume costs
``reprovision_delay + restore_time``.

Tie-breaking at an eviction instant (the convention the brute-force
oracle must share):
  * a run finishing exactly at the eviction instant counts as completed;
  * a checkpoint finishing exactly then counts as committed (and the
    eviction still fires, losing nothing);
  * a checkpoint that would *start* exactly then does not start;
  * evictions never strike while reprovisioning, and the first eviction
    after a resume is the first multiple strictly after the resume time.

Costs: ``cost`` converts wall time to money at an hourly rate, exact
internally; rounding to cents is display-only.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math

PERIODIC = "periodic"
BOUNDARY_ONLY = "boundary_only"
NONE = "none"

DEFAULT_SPOT_RATE = 0.076  # $/hour
DEFAULT_ON_DEMAND_RATE = 0.38  # $/hour
DEFAULT_STORAGE_RATE = 16.00  # $ per 100 GiB provisioned per month


@dataclasses.dataclass(frozen=True)
class PricingModel:
    spot_rate: float = DEFAULT_SPOT_RATE
    on_demand_rate: float = DEFAULT_ON_DEMAND_RATE
    storage_rate: float = DEFAULT_STORAGE_RATE
    provisioned_storage_gib: float = 100.0

    def __post_init__(self):
        for rate in (self.spot_rate, self.on_demand_rate, self.storage_rate):
            if rate < 0:
                raise ValueError("rates must be >= 0")

    def monthly_storage_cost(self) -> float:
        return self.storage_rate * self.provisioned_storage_gib / 100.0


@dataclasses.dataclass(frozen=True)
class SimParams:
    stage_durations: tuple[float, ...]
    checkpoint_policy: str = NONE  # periodic | boundary_only | none
    checkpoint_period: float | None = None  # required for periodic
    checkpoint_overhead: float = 0.0
    restore_time: float = 0.0
    reprovision_delay: float = 0.0
    eviction_interval: float = math.inf
    horizon_factor: float = 100.0

    def __post_init__(self):
        if any(d < 0 for d in self.stage_durations):
            raise ValueError("stage durations must be >= 0")
        for d in (self.checkpoint_overhead, self.restore_time, self.reprovision_delay):
            if d < 0:
                raise ValueError("overheads must be >= 0")
        if self.eviction_interval <= 0:
            raise ValueError("eviction_interval must be > 0")
        if self.checkpoint_policy == PERIODIC:
            if self.checkpoint_period is None or self.checkpoint_period <= 0:
                raise ValueError("periodic policy needs checkpoint_period > 0")
        elif self.checkpoint_policy not in (BOUNDARY_ONLY, NONE):
            raise ValueError(f"unknown policy {self.checkpoint_policy!r}")

    @property
    def total_work(self) -> float:
        return sum(self.stage_durations)


@dataclasses.dataclass
class SimResult:
    makespan: float
    evictions: int
    lost_work: float
    checkpoints_taken: int
    spot_cost: float
    on_demand_cost: float


class NonconvergenceError(RuntimeError):
    """The policy cannot make progress; the run would never complete."""


def _boundaries(stage_durations) -> list[float]:
    out, acc = [], 0.0
    for d in stage_durations:
        acc += d
        out.append(acc)
    return out


def simulate(params: SimParams, pricing: PricingModel | None = None) -> SimResult:
    pricing = pricing or PricingModel()
    total = params.total_work
    if total == 0:
        return _priced(0.0, 0, 0.0, 0, pricing)

    E = params.eviction_interval
    c = params.checkpoint_overhead
    boundaries = _boundaries(params.stage_durations)
    horizon = params.horizon_factor * total

    t = 0.0
    committed = 0.0
    evictions = 0
    lost = 0.0
    ckpts = 0
    ev_index = 1  # next eviction at ev_index * E

    def next_eviction_after(when: float) -> float:
        nonlocal ev_index
        if math.isinf(E):
            return math.inf
        while ev_index * E <= when:
            ev_index += 1
        return ev_index * E

    next_ev = next_eviction_after(t)
    progress = committed
    since_ckpt = 0.0  # worked seconds since last commit / attempt start

    while True:
        if t > horizon:
            raise NonconvergenceError(
                f"no completion within {params.horizon_factor:g}x eviction-free work "
                f"(policy={params.checkpoint_policy}, E={E:g})"
            )
        # distance (in work) to the next commit point, if any
        if params.checkpoint_policy == PERIODIC:
            to_commit = params.checkpoint_period - since_ckpt
        elif params.checkpoint_policy == BOUNDARY_ONLY:
            nxt = next((b for b in boundaries if b > progress and b < total), None)
            to_commit = math.inf if nxt is None else nxt - progress
        else:
            to_commit = math.inf
        to_finish = total - progress

        if to_finish <= to_commit:
            t_fin = t + to_finish
            if t_fin <= next_ev:
                return _priced(t_fin, evictions, lost, ckpts, pricing)
            progress += next_ev - t  # evicted in the final stretch
        else:
            work_end = t + to_commit
            if work_end >= next_ev:
                progress += next_ev - t  # evicted mid-work (or at ckpt start instant)
            elif work_end + c > next_ev:
                progress += to_commit  # evicted mid-checkpoint
            else:
                # checkpoint commits
                t = work_end + c
                progress += to_commit
                committed = progress
                since_ckpt = 0.0
                ckpts += 1
                if t < next_ev:
                    continue
                # committed exactly at the eviction instant: eviction still
                # fires, losing nothing
        # reaching here means an eviction fired at next_ev
        evictions += 1
        lost += progress - committed
        t = next_ev + params.reprovision_delay + params.restore_time
        progress = committed
        since_ckpt = 0.0
        next_ev = next_eviction_after(t)


def _priced(makespan, evictions, lost, ckpts, pricing) -> SimResult:
    return SimResult(
        makespan=makespan,
        evictions=evictions,
        lost_work=lost,
        checkpoints_taken=ckpts,
        spot_cost=cost(makespan, pricing.spot_rate),
        on_demand_cost=cost(makespan, pricing.on_demand_rate),
    )


def cost(duration_seconds: float, rate_per_hour: float) -> float:
    """Money for running ``duration_seconds`` at an hourly rate."""
    if duration_seconds < 0:
        raise ValueError("duration must be >= 0")
    return duration_seconds / 3600.0 * rate_per_hour


def savings(cost_a: float, cost_b: float) -> float:
    """Percent saved choosing a over b: (1 - a/b) * 100."""
    if cost_b <= 0:
        raise ValueError("baseline cost must be > 0")
    return (1.0 - cost_a / cost_b) * 100.0


def makespan_gap(slower: float, faster: float) -> float:
    """Percent time saved by the faster makespan relative to the slower one."""
    if slower <= 0:
        raise ValueError("slower makespan must be > 0")
    return (slower - faster) / slower * 100.0


# ---------------------------------------------------------------------------
# Reporting: per-stage benchmark rows with cost columns
# ---------------------------------------------------------------------------

CSV_COLUMNS = [
    "k33", "k55", "k77", "k99", "k127",
    "total", "eviction", "ckpt_type", "spot_cost", "ondemand_cost",
]

STAGE_COLUMNS = ["k33", "k55", "k77", "k99", "k127"]


@dataclasses.dataclass
class ReportRow:
    stage_seconds: dict  # column name -> seconds (missing stages allowed)
    eviction: str = "N/A"
    ckpt_type: str = "N/A"

    @property
    def total_seconds(self) -> float:
        return sum(self.stage_seconds.values())


def parse_hms(text: str) -> float:
    """'33:50' or '3:03:26' -> seconds."""
    parts = [int(p) for p in text.split(":")]
    if len(parts) == 2:
        h, m, s = 0, parts[0], parts[1]
    elif len(parts) == 3:
        h, m, s = parts
    else:
        raise ValueError(f"bad duration {text!r}")
    return float(h * 3600 + m * 60 + s)


def format_hms(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600}:{s % 3600 // 60:02d}:{s % 60:02d}"


def row_from_ledger(run_ledger, eviction_label: str = "N/A", ckpt_type: str = "N/A") -> ReportRow:
    stage_times = run_ledger.stage_times()
    return ReportRow(
        stage_seconds={name.lower(): secs for name, secs in stage_times.items()},
        eviction=eviction_label,
        ckpt_type=ckpt_type,
    )


def report_csv(rows: list[ReportRow], pricing: PricingModel | None = None) -> str:
    pricing = pricing or PricingModel()
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        total = row.total_seconds
        record = [format_hms(row.stage_seconds.get(col, 0.0)) for col in STAGE_COLUMNS]
        record += [
            format_hms(total),
            row.eviction,
            row.ckpt_type,
            f"{cost(total, pricing.spot_rate):.3f}",
            f"{cost(total, pricing.on_demand_rate):.3f}",
        ]
        writer.writerow(record)
    return buf.getvalue()


def report_table(rows: list[ReportRow], pricing: PricingModel | None = None) -> str:
    """Aligned-text rendering of the same rows as report_csv."""
    lines = [line.split(",") for line in report_csv(rows, pricing).strip().splitlines()]
    widths = [max(len(cell) for cell in col) for col in zip(*lines)] if lines else []
    out = []
    for cells in lines:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip())
    return "\n".join(out) + "\n"
