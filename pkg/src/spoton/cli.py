"""Single entry-point command surface: spoton <subcommand>.

Subcommands: run, resume, mock-serve, mock-evict, sim, report, drill.
Shared flags: --config PATH, --set section.key=value (repeatable),
--store DIR, --endpoint URL, --json.  The SPOTON_ENDPOINT environment
variable overrides the metadata endpoint (configuration, not code).

Exit codes: 0 completed, 64 evicted-and-stopped, 65 unrecoverable error,
66 config parse error, 70 drill digest mismatch.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import requests

from . import cloudmock, coordinator, spotsim, workload
from .config import ConfigError, CoordinatorConfig, dump_config, load_config
from .coordinator import EXIT_CONFIG, EXIT_DIGEST_MISMATCH, EXIT_ERROR
from .ledger import RunLedger


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None, help="config file (INI sections)")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        dest="overrides", help="override a config value, e.g. checkpoint.interval=60")
    parser.add_argument("--store", metavar="DIR", default=None, help="checkpoint store root")
    parser.add_argument("--endpoint", metavar="URL", default=None, help="metadata scheduled-events URL")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--dump-config", action="store_true", help="print the effective config and exit")


def _load(args) -> CoordinatorConfig:
    overrides = list(args.overrides)
    if args.store:
        overrides.append(f"checkpoint.store_root={args.store}")
    endpoint = args.endpoint or os.environ.get("SPOTON_ENDPOINT")
    if endpoint:
        overrides.append(f"eviction.endpoint={endpoint}")
    return load_config(args.config, overrides)


def _cmd_run_or_resume(args, which: str) -> int:
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        print(dump_config(config), end="")
        return 0
    outcome = coordinator.run(config) if which == "run" else coordinator.resume(config)
    if args.json:
        print(json.dumps({"status": outcome.status, "digest": outcome.digest,
                          "exit_code": outcome.exit_code}))
    else:
        print(f"status: {outcome.status}")
        if outcome.digest:
            print(f"digest: {outcome.digest}")
    return outcome.exit_code


def _cmd_mock_serve(args) -> int:
    server = cloudmock.MockServer(
        host=args.host, port=args.port,
        min_notice=args.min_notice, kill=not args.no_kill,
    )
    server.start()
    print(f"scheduled-events endpoint: {server.endpoint}")
    print(f"admin base: {server.base_url}/admin")
    try:
        signal.pause()
    except (KeyboardInterrupt, AttributeError):
        pass
    finally:
        server.stop()
    return 0


def _cmd_mock_evict(args) -> int:
    base = args.admin_url.rstrip("/")
    resp = requests.post(f"{base}/admin/evict", json={"delay_seconds": args.delay}, timeout=5)
    print(resp.text)
    return 0 if resp.status_code == 200 else EXIT_ERROR


def _parse_eviction_interval(text: str) -> float:
    return math.inf if text.lower() in ("inf", "none", "never") else float(text)


def _cmd_sim(args) -> int:
    try:
        params = spotsim.SimParams(
            stage_durations=tuple(float(x) for x in args.stage_durations.split(",")),
            checkpoint_policy=args.policy,
            checkpoint_period=args.period,
            checkpoint_overhead=args.ckpt_overhead,
            restore_time=args.restore_time,
            reprovision_delay=args.reprovision_delay,
            eviction_interval=_parse_eviction_interval(args.eviction_interval),
        )
    except ValueError as exc:
        print(f"invalid simulation parameters: {exc}", file=sys.stderr)
        return 2
    pricing = spotsim.PricingModel(spot_rate=args.spot_rate, on_demand_rate=args.on_demand_rate)
    try:
        result = spotsim.simulate(params, pricing)
    except spotsim.NonconvergenceError as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.json:
        print(json.dumps(vars(result)))
    else:
        print("makespan,evictions,lost_work,checkpoints,spot_cost,ondemand_cost")
        print(f"{result.makespan:.3f},{result.evictions},{result.lost_work:.3f},"
              f"{result.checkpoints_taken},{result.spot_cost:.3f},{result.on_demand_cost:.3f}")
    return 0


def _rows_from_csv(path: str) -> list[spotsim.ReportRow]:
    import csv as csvmod
    rows = []
    with open(path, newline="") as fh:
        for record in csvmod.DictReader(fh):
            stage_seconds = {
                col: spotsim.parse_hms(record[col])
                for col in spotsim.STAGE_COLUMNS if record.get(col)
            }
            rows.append(spotsim.ReportRow(
                stage_seconds=stage_seconds,
                eviction=record.get("eviction", "N/A") or "N/A",
                ckpt_type=record.get("ckpt_type", "N/A") or "N/A",
            ))
    return rows


def _cmd_report(args) -> int:
    rows: list[spotsim.ReportRow] = []
    if args.rows:
        rows += _rows_from_csv(args.rows)
    for store in args.ledger or []:
        rows.append(spotsim.row_from_ledger(RunLedger(store)))
    pricing = spotsim.PricingModel(spot_rate=args.spot_rate, on_demand_rate=args.on_demand_rate)
    out = spotsim.report_csv(rows, pricing) if args.csv else spotsim.report_table(rows, pricing)
    print(out, end="")
    return 0


def _parse_plan(args) -> list[tuple[float, float]]:
    if args.plan:
        plan = []
        for part in args.plan.split(","):
            at, _, delay = part.partition(":")
            plan.append((float(at), float(delay)))
        return plan
    if args.every is not None:
        return [(args.every * (i + 1), args.delay) for i in range(args.count)]
    return []


def _cmd_drill(args) -> int:
    """Run/resume in a loop while the mock executes an eviction plan.

    Stands in for the cloud's auto-replacement of reclaimed instances:
    every attempt is a fresh coordinator process whose process group the
    mock destroys at each deadline.
    """
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    plan = _parse_plan(args)
    reference = workload.reference_digest(config.workload)

    server = cloudmock.MockServer(min_notice=args.min_notice, kill=True)
    server.start()
    started = time.time()
    try:
        if plan:
            server.schedule_evictions(plan)
        attempt = 0
        final_digest = None
        while attempt < args.max_attempts:
            attempt += 1
            cmd = [
                sys.executable, "-m", "spoton.cli",
                "run" if attempt == 1 else "resume",
                "--store", str(config.store_root),
                "--endpoint", server.endpoint,
                "--set", "eviction.register_child=false",
            ]
            if args.config:
                cmd += ["--config", args.config]
            for item in args.overrides:
                cmd += ["--set", item]
            proc = subprocess.Popen(cmd, start_new_session=True,
                                    stdout=subprocess.DEVNULL, stderr=None)
            server.register_target(proc.pid)
            rc = proc.wait()
            if rc == 0:
                run_ledger = RunLedger(config.store_root)
                for event in reversed(run_ledger.events):
                    if event.kind == "attempt_end" and "digest" in event.fields:
                        final_digest = event.fields["digest"]
                        break
                break
            if rc not in (coordinator.EXIT_EVICTED,) and rc >= 0:
                print(f"attempt {attempt} failed with exit {rc}", file=sys.stderr)
                return EXIT_ERROR
        else:
            print(f"nonconvergence: no completion within {args.max_attempts} attempts",
                  file=sys.stderr)
            return EXIT_ERROR
    finally:
        server.stop()

    makespan = time.time() - started
    run_ledger = RunLedger(config.store_root)
    row = spotsim.row_from_ledger(
        run_ledger,
        eviction_label=args.plan or (f"every {args.every:g}s" if args.every else "N/A"),
        ckpt_type=config.checkpointer,
    )
    ok = final_digest == reference
    if args.json:
        print(json.dumps({
            "attempts": attempt,
            "makespan": makespan,
            "digest": final_digest,
            "reference_digest": reference,
            "digest_match": ok,
            "evictions": len(run_ledger.evictions()),
        }))
    else:
        print(spotsim.report_table([row], config.pricing), end="")
        print(f"attempts={attempt} makespan={makespan:.1f}s digest_match={ok}")
    if not ok:
        print("digest mismatch against eviction-free reference", file=sys.stderr)
        return EXIT_DIGEST_MISMATCH
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spoton", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (("run", "launch the workload under supervision"),
                      ("resume", "resume from the most recent valid checkpoint")):
        p = sub.add_parser(name, help=doc)
        _add_config_flags(p)

    p = sub.add_parser("mock-serve", help="serve the mock metadata endpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7300)
    p.add_argument("--min-notice", type=float, default=cloudmock.DEFAULT_MIN_NOTICE)
    p.add_argument("--no-kill", action="store_true", help="emit events without killing the target")

    p = sub.add_parser("mock-evict", help="trigger an eviction on a running mock")
    p.add_argument("--admin-url", default="http://127.0.0.1:7300")
    p.add_argument("--delay", type=float, default=60.0)

    p = sub.add_parser("sim", help="simulate makespan and cost under periodic evictions")
    p.add_argument("--stage-durations", required=True, metavar="S1,S2,...",
                   help="eviction-free stage durations in seconds")
    p.add_argument("--policy", choices=[spotsim.PERIODIC, spotsim.BOUNDARY_ONLY, spotsim.NONE],
                   default=spotsim.NONE)
    p.add_argument("--period", type=float, default=None, help="periodic checkpoint period (s)")
    p.add_argument("--ckpt-overhead", type=float, default=0.0)
    p.add_argument("--restore-time", type=float, default=0.0)
    p.add_argument("--reprovision-delay", type=float, default=0.0)
    p.add_argument("--eviction-interval", default="inf", help="seconds between evictions, or 'inf'")
    p.add_argument("--spot-rate", type=float, default=spotsim.DEFAULT_SPOT_RATE)
    p.add_argument("--on-demand-rate", type=float, default=spotsim.DEFAULT_ON_DEMAND_RATE)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("report", help="cost report over recorded ledgers or a CSV of stage times")
    p.add_argument("--ledger", action="append", metavar="STORE_DIR",
                   help="store root containing ledger/events.log (repeatable)")
    p.add_argument("--rows", metavar="CSV", help="CSV with k33..k127 (h:mm:ss), eviction, ckpt_type")
    p.add_argument("--csv", action="store_true", help="CSV output instead of aligned text")
    p.add_argument("--spot-rate", type=float, default=spotsim.DEFAULT_SPOT_RATE)
    p.add_argument("--on-demand-rate", type=float, default=spotsim.DEFAULT_ON_DEMAND_RATE)

    p = sub.add_parser("drill", help="eviction drill: run/resume loop against the mock")
    _add_config_flags(p)
    p.add_argument("--plan", metavar="AT:DELAY,...", default=None,
                   help="eviction plan, times relative to drill start")
    p.add_argument("--every", type=float, default=None, help="trigger an eviction every N seconds")
    p.add_argument("--delay", type=float, default=45.0, help="notice delay for --every plans")
    p.add_argument("--count", type=int, default=10, help="number of evictions for --every plans")
    p.add_argument("--min-notice", type=float, default=cloudmock.DEFAULT_MIN_NOTICE,
                   help="mock's notice floor (lower it for scaled-down drills)")
    p.add_argument("--max-attempts", type=int, default=50)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run_or_resume(args, "run")
    if args.command == "resume":
        return _cmd_run_or_resume(args, "resume")
    if args.command == "mock-serve":
        return _cmd_mock_serve(args)
    if args.command == "mock-evict":
        return _cmd_mock_evict(args)
    if args.command == "sim":
        return _cmd_sim(args)
    if args.command == "report":
        return _cmd_report(args)
    if args.command == "drill":
        return _cmd_drill(args)
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
