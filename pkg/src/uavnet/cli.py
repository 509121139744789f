"""Command-line entry point wiring all modules together.

Subcommands: ingest, synth, probe {server,client}, analyze {handover,
stats,compare}, predict {train,eval}. Reports are machine-readable CSV
first; the only graphical artifact is an optional static SVG of the voxel
grid. All randomness flows from explicit seeds, so identical invocations
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import handover as ho
from . import ingest, predict, probe, stats, synth
from .model import GeoPosition, LinkType, validate_dataset


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def _parse_emit(arg: str, allowed: Sequence[str]) -> list[str]:
    targets = [t.strip() for t in arg.split(",") if t.strip()]
    for t in targets:
        if t not in allowed:
            raise ValueError(f"unknown emit target {t!r}; choose from {', '.join(allowed)}")
    return targets


def _load(path: str, link: Optional[str] = None, fmt: Optional[str] = None):
    result = ingest.parse_dataset(path, link=LinkType(link) if link else None, fmt=fmt)
    for lineno, reason in result.rejected:
        print(f"warning: {path}:{lineno}: rejected: {reason}", file=sys.stderr)
    if result.reorder_count:
        print(f"warning: {path}: re-sorted {result.reorder_count} out-of-order samples",
              file=sys.stderr)
    return result.dataset


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


# ---------------------------------------------------------------------------
# ingest

def cmd_ingest(args) -> int:
    ds = _load(args.input, args.link, args.format)
    print(f"{ds.flight_id}: {len(ds)} samples, link={args.link}")
    if args.validate:
        report = validate_dataset(ds)
        print(f"violations: {len(report.violations)}")
        for v in report.violations:
            print(f"  [{v.index}] {v.field}: {v.message}")
        print(f"timestamp regressions: {report.timestamp_regressions}")
        print(f"serving cell_id null fraction: {report.serving_null_fraction:.4%}"
              + ("  (warning: above budget)" if report.serving_null_warning else ""))
    return 0


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    scenario = synth.load_scenario(args.scenario)
    ds, truth = synth.run_scenario(scenario, seed=args.seed)
    ingest.write_dataset(ds, args.out, fmt=args.format)
    print(f"wrote {len(ds)} samples to {args.out}")
    if args.truth:
        if truth is None:
            print("no ground truth for satellite scenarios", file=sys.stderr)
        else:
            synth.save_ground_truth(truth, args.truth)
            print(f"wrote ground truth ({len(truth.handovers)} handovers) to {args.truth}")
    return 0


# ---------------------------------------------------------------------------
# probe

def cmd_probe_server(args) -> int:
    echo = probe.EchoServer(bind=args.bind).start()
    tp = probe.ThroughputServer(bind=args.throughput_bind,
                                rate_limit_mbps=args.rate_limit_mbps).start()
    print(f"echo on {echo.address[0]}:{echo.address[1]}, "
          f"throughput on {tp.address[0]}:{tp.address[1]}")
    try:
        if args.duration is not None:
            import time
            time.sleep(args.duration)
        else:
            while True:
                import time
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        echo.stop()
        tp.stop()
    return 0


def cmd_probe_client(args) -> int:
    cfg = probe.ProbeConfig(
        echo_server=args.server,
        duration_s=args.count * args.interval,
        throughput_server=args.throughput_server,
        echo_interval_s=args.interval,
        echo_timeout_s=args.timeout,
        throughput_every_s=args.throughput_every if args.throughput_server else None,
        throughput_duration_s=args.throughput_duration,
    )
    records = probe.probe_scheduler(cfg)
    delivered = sum(r.pkts_delivered for r in records)
    sent = sum(r.pkts_sent for r in records)
    print(f"echo: {delivered}/{sent} delivered"
          + (f" ({stats.delivery_rate(sent, delivered)}%)" if sent else ""))
    biased = sum(1 for r in records if r.during_transfer)
    if biased:
        print(f"{biased} echo records overlapped a bulk transfer (flagged)")
    if args.out:
        ds = probe.records_to_dataset(records, link=LinkType(args.link))
        ingest.write_dataset(ds, args.out, fmt=args.format)
        print(f"wrote {len(ds)} records to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# analyze

HANDOVER_EMITS = ("events.csv", "rate.csv", "impact.csv", "visibility.csv")


def cmd_analyze_handover(args) -> int:
    ds = _load(args.input, args.link, args.format)
    th = ho.HandoverThresholds(a3_delta_db=args.a3_delta, e2_rsrp_dbm=args.e2_rsrp,
                               e2_rsrq_db=args.e2_rsrq, e3_rsrp_dbm=args.e3_rsrp)
    events = ho.detect_and_classify(ds, th)
    annotated, summary = ho.rtt_impact(events, ds, window_s=args.rtt_window,
                                       k=args.rtt_k)
    by_cause = {c.value: sum(1 for e in events if e.cause is c)
                for c in ho.HandoverCause}
    print(f"{len(events)} handovers: " +
          ", ".join(f"{k}={v}" for k, v in by_cause.items()))
    print(f"rtt impact: {summary.n_improve} improved, {summary.n_degrade} degraded, "
          f"max increase {summary.max_increase}, max decrease {summary.max_decrease}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = _parse_emit(args.emit, HANDOVER_EMITS)

    if "events.csv" in targets:
        _write_csv(out_dir / "events.csv",
                   ("t_ns", "from_cell", "to_cell", "cause",
                    "pre_rsrp", "pre_rsrq", "pre_nb_rsrp"),
                   ((e.t, e.from_cell, e.to_cell, e.cause.value,
                     e.pre_rsrp, e.pre_rsrq, e.pre_nb_rsrp) for e in events))
    if "rate.csv" in targets:
        bins = ho.handover_rate(events, ds, bin_minutes=args.bin_minutes)
        _write_csv(out_dir / "rate.csv",
                   ("bin_start_ns", "e1", "e2", "e3", "e4", "total"),
                   ((b.t_start, b.counts[ho.HandoverCause.E1],
                     b.counts[ho.HandoverCause.E2], b.counts[ho.HandoverCause.E3],
                     b.counts[ho.HandoverCause.E4], b.total) for b in bins))
    if "impact.csv" in targets:
        _write_csv(out_dir / "impact.csv",
                   ("t_ns", "from_cell", "to_cell", "cause", "rtt_delta_ms"),
                   ((e.t, e.from_cell, e.to_cell, e.cause.value, e.rtt_delta_ms)
                    for e in annotated))
    if "visibility.csv" in targets:
        t0 = ds.samples[0].timestamp
        boundaries = [t0 + int(float(b) * 1e9)
                      for b in args.phase_boundaries.split(",")] \
            if args.phase_boundaries else []
        names = args.phase_names.split(",") if args.phase_names else None
        segments = ingest.segment_phases(ds, boundaries, names)
        vis = ho.cell_visibility(ds, segments, events=events)
        _write_csv(out_dir / "visibility.csv",
                   ("segment", "t_start_ns", "t_end_ns", "unique_cells",
                    "handovers", "handovers_per_min"),
                   ((v.segment.name, v.segment.t_start, v.segment.t_end,
                     v.unique_cells, v.handovers, v.handovers_per_min)
                    for v in vis))
    return 0


STATS_EMITS = ("cdf.csv", "profile.csv", "dominance.csv", "grid.csv",
               "grid.svg", "thresholds.csv")


def cmd_analyze_stats(args) -> int:
    ds = _load(args.input, args.link, args.format)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = _parse_emit(args.emit, STATS_EMITS)

    report = stats.threshold_report(ds)
    pretty = {m: (f"{f:.2%}" if f is not None else "n/a") for m, f in report.items()}
    print("poor-quality fractions: " +
          ", ".join(f"{m}={v}" for m, v in pretty.items()))

    if "cdf.csv" in targets:
        rows = []
        for metric in (*stats.RADIO_METRICS, *stats.E2E_METRICS):
            values = [v for v in stats.metric_values(ds.samples, metric)
                      if v is not None and math.isfinite(v)]
            if not values:
                continue
            curve = stats.cdf(values)
            lo, hi = curve.sorted_values[0], curve.sorted_values[-1]
            grid = [lo + (hi - lo) * i / 199 for i in range(200)] if hi > lo else [lo]
            rows.extend((metric, x, curve.eval(x)) for x in grid)
        _write_csv(out_dir / "cdf.csv", ("metric", "x", "f"), rows)
    if "profile.csv" in targets:
        binned = ingest.bin_by_altitude(ds, width_m=args.bin_width)
        rows = []
        for metric in stats.RADIO_METRICS:
            profile = stats.altitude_profile(binned, metric)
            rows.extend((b.lo_m, b.hi_m, metric, p.mean, p.std, p.median, p.count)
                        for b, p in profile.items())
        _write_csv(out_dir / "profile.csv",
                   ("bin_lo_m", "bin_hi_m", "metric", "mean", "std", "median", "count"),
                   rows)
    if "dominance.csv" in targets:
        shares = stats.dominance(ds)
        _write_csv(out_dir / "dominance.csv", ("cell_id", "share"), shares.items())
    need_grid = [t for t in ("grid.csv", "grid.svg") if t in targets]
    if need_grid:
        grid = stats.voxelize(ds, args.metric, cell_size=tuple(args.voxel))
        if "grid.csv" in need_grid:
            _write_csv(out_dir / "grid.csv",
                       ("i", "j", "k", "x_lo_m", "y_lo_m", "z_lo_m",
                        "mean", "std", "count"),
                       (((i, j, k, *grid.corner((i, j, k)), c.mean, c.std, c.count)
                         for (i, j, k), c in grid.cells.items())))
        if "grid.svg" in need_grid:
            _render_grid_svg(grid, out_dir / "grid.svg")
    if "thresholds.csv" in targets:
        th = stats.QualityThresholds()
        _write_csv(out_dir / "thresholds.csv",
                   ("metric", "threshold", "fraction_below"),
                   ((m, th.for_metric(m), report[m]) for m in stats.RADIO_METRICS))
    return 0


def _heat_color(t: float) -> str:
    # Two-segment blue -> pale yellow -> red ramp.
    anchors = ((0x2C, 0x7B, 0xB6), (0xFF, 0xFF, 0xBF), (0xD7, 0x19, 0x1C))
    if t <= 0.5:
        a, b, u = anchors[0], anchors[1], t * 2
    else:
        a, b, u = anchors[1], anchors[2], (t - 0.5) * 2
    rgb = [round(x + (y - x) * u) for x, y in zip(a, b)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _render_grid_svg(grid: stats.VoxelGrid, path: Path, px_per_cell: int = 12) -> None:
    """Static top-down rendering: per-column count-weighted mean over altitude."""
    columns: dict[tuple[int, int], list[tuple[float, int]]] = {}
    for (i, j, _k), cell in grid.cells.items():
        columns.setdefault((i, j), []).append((cell.mean, cell.count))
    if not columns:
        path.write_text("<svg xmlns='http://www.w3.org/2000/svg'/>\n")
        return
    agg = {key: sum(m * c for m, c in vals) / sum(c for _, c in vals)
           for key, vals in sorted(columns.items())}
    vmin = min(agg.values())
    vmax = max(agg.values())
    i_lo = min(i for i, _ in agg)
    j_lo = min(j for _, j in agg)
    width = (max(i for i, _ in agg) - i_lo + 1) * px_per_cell
    height = (max(j for _, j in agg) - j_lo + 1) * px_per_cell
    parts = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' "
             f"height='{height}' viewBox='0 0 {width} {height}'>"]
    parts.append(f"<title>{grid.metric} voxel map</title>")
    for (i, j), value in agg.items():
        t = 0.5 if vmax == vmin else (value - vmin) / (vmax - vmin)
        x = (i - i_lo) * px_per_cell
        y = height - (j - j_lo + 1) * px_per_cell  # north up
        parts.append(f"<rect x='{x}' y='{y}' width='{px_per_cell}' "
                     f"height='{px_per_cell}' fill='{_heat_color(t)}'/>")
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def compare(cell_ds, sat_ds) -> list[dict]:
    """Side-by-side E2E report: RTT CDF points, 5th-percentile throughput,
    and delivery totals per link."""
    rows = []
    for label, ds in (("cellular", cell_ds), ("satellite", sat_ds)):
        values = {m: [v for v in stats.metric_values(ds.samples, m)
                      if v is not None and math.isfinite(v)]
                  for m in stats.E2E_METRICS}
        if not any(values.values()):
            raise ValueError(f"{label} dataset has no E2E data")
        rtt = stats.cdf(values["rtt_ms"]) if values["rtt_ms"] else None
        dl = stats.cdf(values["dl_mbps"]) if values["dl_mbps"] else None
        ul = stats.cdf(values["ul_mbps"]) if values["ul_mbps"] else None
        sent = sum(s.e2e.pkts_sent for s in ds.samples
                   if s.e2e is not None and s.e2e.pkts_sent is not None)
        delivered = sum(s.e2e.pkts_delivered for s in ds.samples
                        if s.e2e is not None and s.e2e.pkts_delivered is not None)
        rows.append({
            "link": label,
            "n_rtt": rtt.n if rtt else 0,
            "rtt_f50": rtt.eval(50.0) if rtt else None,
            "rtt_f150": rtt.eval(150.0) if rtt else None,
            "rtt_p95_ms": rtt.quantile(0.95) if rtt else None,
            "dl_p05_mbps": dl.quantile(0.05) if dl else None,
            "ul_p05_mbps": ul.quantile(0.05) if ul else None,
            "pkts_sent": sent or None,
            "pkts_delivered": delivered or None,
            "delivery_pct": (stats.delivery_rate(sent, delivered)
                             if sent else None),
        })
    return rows


COMPARE_COLUMNS = ("link", "n_rtt", "rtt_f50", "rtt_f150", "rtt_p95_ms",
                   "dl_p05_mbps", "ul_p05_mbps", "pkts_sent", "pkts_delivered",
                   "delivery_pct")


def cmd_analyze_compare(args) -> int:
    cell_ds = _load(args.cellular, "cellular", args.format)
    sat_ds = _load(args.satellite, "satellite", args.format)
    rows = compare(cell_ds, sat_ds)
    for row in rows:
        print(f"{row['link']}: F(50ms)={row['rtt_f50']}, F(150ms)={row['rtt_f150']}, "
              f"DL p05={row['dl_p05_mbps']}, delivery={row['delivery_pct']}%")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "compare.csv", COMPARE_COLUMNS,
               ([row[c] for c in COMPARE_COLUMNS] for row in rows))
    return 0


# ---------------------------------------------------------------------------
# predict

def cmd_predict_train(args) -> int:
    ds = _load(args.input, args.link, args.format)
    X, y = predict.feature_rows(ds, args.metric)
    model = predict.fit(X, y, predict.ModelKind(args.model), seed=args.seed,
                        target_metric=args.metric)
    predict.save_model(model, args.out)
    train_mae, train_rmse = predict.metrics(y, predict.predict(model, X))
    print(f"trained {args.model} on {len(X)} rows "
          f"(training mae={train_mae:.3f}, rmse={train_rmse:.3f}); saved to {args.out}")
    return 0


def cmd_predict_eval(args) -> int:
    ds = _load(args.input, args.link, args.format)
    X, y = predict.feature_rows(ds, args.metric)
    kind = predict.ModelKind(args.model)
    if args.protocol == "loao":
        report = predict.eval_loao(X, y, kind, bin_width_m=args.bin_width,
                                   seed=args.seed, target_metric=args.metric)
    else:
        report = predict.eval_split(X, y, kind, test_fraction=args.test_fraction,
                                    seed=args.seed, target_metric=args.metric)
    print(f"{args.protocol} {args.model} {args.metric}: "
          f"pooled mae={report.pooled_mae:.3f}, rmse={report.pooled_rmse:.3f} "
          f"over {len(report.folds)} fold(s)")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [(f.label, f.n_test, f.mae, f.rmse) for f in report.folds]
    rows.append(("pooled", sum(f.n_test for f in report.folds),
                 report.pooled_mae, report.pooled_rmse))
    _write_csv(out_dir / "report.csv", ("fold", "n_test", "mae", "rmse"), rows)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavnet",
        description="UAV network measurement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_dir=False):
        p.add_argument("--format", choices=("csv", "jsonl"), default=None,
                       help="dataset file format (default: by extension)")
        if out_dir:
            p.add_argument("--out-dir", default=".", help="directory for emitted files")

    p = sub.add_parser("ingest", help="parse and optionally validate a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--link", choices=("cellular", "satellite"), default="cellular")
    p.add_argument("--validate", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic flight from a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None)
    add_common(p)
    p.set_defaults(func=cmd_synth)

    probe_p = sub.add_parser("probe", help="run the measurement endpoints")
    probe_sub = probe_p.add_subparsers(dest="probe_command", required=True)

    p = probe_sub.add_parser("server", help="echo + throughput server")
    p.add_argument("--bind", type=_addr, default=("0.0.0.0", 9200))
    p.add_argument("--throughput-bind", type=_addr, default=("0.0.0.0", 9201))
    p.add_argument("--rate-limit-mbps", type=float, default=None)
    p.add_argument("--duration", type=float, default=None,
                   help="stop after this many seconds (default: run forever)")
    p.set_defaults(func=cmd_probe_server)

    p = probe_sub.add_parser("client", help="periodic echo/throughput probes")
    p.add_argument("--server", type=_addr, required=True)
    p.add_argument("--throughput-server", type=_addr, default=None)
    p.add_argument("--count", type=int, default=60)
    p.add_argument("--interval", type=float, default=1.0)
    p.add_argument("--timeout", type=float, default=2.0)
    p.add_argument("--throughput-every", type=float, default=60.0)
    p.add_argument("--throughput-duration", type=float, default=5.0)
    p.add_argument("--link", choices=("cellular", "satellite"), default="cellular")
    p.add_argument("--out", default=None)
    add_common(p)
    p.set_defaults(func=cmd_probe_client)

    analyze = sub.add_parser("analyze", help="offline analyses")
    analyze_sub = analyze.add_subparsers(dest="analyze_command", required=True)

    p = analyze_sub.add_parser("handover", help="detect, classify, and rate handovers")
    p.add_argument("--input", required=True)
    p.add_argument("--link", choices=("cellular", "satellite"), default="cellular")
    p.add_argument("--a3-delta", type=float, default=3.0, dest="a3_delta")
    p.add_argument("--e2-rsrp", type=float, default=-95.0, dest="e2_rsrp")
    p.add_argument("--e2-rsrq", type=float, default=-18.0, dest="e2_rsrq")
    p.add_argument("--e3-rsrp", type=float, default=-110.0, dest="e3_rsrp")
    p.add_argument("--bin-minutes", type=float, default=10.0)
    p.add_argument("--rtt-window", type=float, default=30.0)
    p.add_argument("--rtt-k", type=int, default=3)
    p.add_argument("--phase-boundaries", default=None,
                   help="comma-separated seconds after the first sample")
    p.add_argument("--phase-names", default=None)
    p.add_argument("--emit", default="events.csv,rate.csv,impact.csv,visibility.csv")
    add_common(p, out_dir=True)
    p.set_defaults(func=cmd_analyze_handover)

    p = analyze_sub.add_parser("stats", help="CDFs, profiles, dominance, voxel grid")
    p.add_argument("--input", required=True)
    p.add_argument("--link", choices=("cellular", "satellite"), default="cellular")
    p.add_argument("--metric", default="rsrp",
                   choices=sorted(stats.METRIC_GETTERS),
                   help="metric for the voxel grid")
    p.add_argument("--bin-width", type=float, default=10.0)
    p.add_argument("--voxel", type=float, nargs=3, default=[50.0, 50.0, 10.0],
                   metavar=("DX", "DY", "DZ"))
    p.add_argument("--emit", default="cdf.csv,profile.csv,dominance.csv,grid.csv")
    add_common(p, out_dir=True)
    p.set_defaults(func=cmd_analyze_stats)

    p = analyze_sub.add_parser("compare", help="cellular vs satellite E2E report")
    p.add_argument("--cellular", required=True)
    p.add_argument("--satellite", required=True)
    p.add_argument("--emit", default="compare.csv")
    add_common(p, out_dir=True)
    p.set_defaults(func=cmd_analyze_compare)

    predict_p = sub.add_parser("predict", help="3D signal prediction")
    predict_sub = predict_p.add_subparsers(dest="predict_command", required=True)

    p = predict_sub.add_parser("train", help="fit one model and save it")
    p.add_argument("--input", required=True)
    p.add_argument("--link", choices=("cellular", "satellite"), default="cellular")
    p.add_argument("--metric", choices=predict.TARGET_METRICS, default="rsrp")
    p.add_argument("--model", choices=[k.value for k in predict.ModelKind], default="rf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_predict_train)

    p = predict_sub.add_parser("eval", help="LOAO or random-split evaluation")
    p.add_argument("--input", required=True)
    p.add_argument("--link", choices=("cellular", "satellite"), default="cellular")
    p.add_argument("--metric", choices=predict.TARGET_METRICS, default="rsrp")
    p.add_argument("--model", choices=[k.value for k in predict.ModelKind], default="rf")
    p.add_argument("--protocol", choices=("loao", "split"), required=True)
    p.add_argument("--bin-width", type=float, default=10.0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    add_common(p, out_dir=True)
    p.set_defaults(func=cmd_predict_eval)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
