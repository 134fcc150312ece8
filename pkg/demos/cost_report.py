"""Cost arithmetic over the recorded genome-assembly benchmark rows.

Eight runs of the same five-stage assembly (k-mer sizes 33..127), with
and without eviction pressure and under two checkpointing styles, priced
at spot and on-demand hourly rates.

    python3 demos/cost_report.py
"""

from spoton.spotsim import (
    DEFAULT_ON_DEMAND_RATE,
    DEFAULT_SPOT_RATE,
    ReportRow,
    cost,
    parse_hms,
    report_table,
    savings,
)

STAGE_NAMES = ["k33", "k55", "k77", "k99", "k127"]

ROWS = [
    (("33:50", "38:53", "39:51", "40:19", "30:33"), "N/A", "none (baseline)"),
    (("33:57", "39:03", "41:35", "40:41", "31:01"), "N/A", "transparent_idle"),
    (("33:33", "40:15", "57:16", "38:56", "46:14"), "every_90min", "application"),
    (("29:22", "1:05:25", "1:03:03", "59:25", "51:07"), "every_60min", "application"),
    (("32:52", "37:03", "41:15", "39:53", "28:32"), "every_90min", "transparent_30min"),
    (("32:45", "38:13", "41:58", "39:50", "32:22"), "every_90min", "transparent_15min"),
    (("32:40", "38:52", "41:10", "39:45", "28:34"), "every_60min", "transparent_30min"),
    (("31:10", "38:15", "42:05", "40:01", "30:29"), "every_60min", "transparent_15min"),
]


def main():
    rows = [
        ReportRow(dict(zip(STAGE_NAMES, (parse_hms(t) for t in times))),
                  eviction=ev, ckpt_type=kind)
        for times, ev, kind in ROWS
    ]
    print(report_table(rows))

    baseline_od = cost(rows[0].total_seconds, DEFAULT_ON_DEMAND_RATE)
    app90_spot = cost(rows[2].total_seconds, DEFAULT_SPOT_RATE)
    trans90_spot = cost(rows[4].total_seconds, DEFAULT_SPOT_RATE)
    app60_od = cost(rows[3].total_seconds, DEFAULT_ON_DEMAND_RATE)

    print(f"application checkpointing on spot vs on-demand baseline: "
          f"{savings(app90_spot, baseline_od):.1f}% saved")
    print(f"transparent checkpointing on spot vs application-on-demand under "
          f"hourly evictions: {savings(trans90_spot, app60_od):.1f}% saved")


if __name__ == "__main__":
    main()
