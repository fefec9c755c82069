"""Command-line entry point: ``dcbench <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 insufficient data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import DCBenchError
from .pipeline import (
    ANALYSIS_VIEWS,
    Context,
    run_pipeline,
    stage_analyze,
    stage_classify,
    stage_extract,
    stage_ingest,
    stage_report,
    stage_simulate,
    stage_synth,
    stage_topo,
)
from .trace import read_trace, trace_to_csv


def _csv_list(text):
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dcbench", description="Trace-driven data-center network benchmarking.")
    ap.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("ingest", help="parse pcap captures into a fused trace")
    p.add_argument("--pcap", nargs="+", required=True)
    p.add_argument("--port-map", help="JSON: {capture: {ingress: int, egress: int}}")
    p.add_argument("--node-key", choices=["ip:port", "ip"], default="ip:port")
    p.add_argument("--out", required=True)

    p = sub.add_parser("topo", help="build a topology description")
    tsub = p.add_subparsers(dest="topo_cmd", required=True)
    b = tsub.add_parser("build")
    b.add_argument("--kind", required=True, choices=["three-tier", "fat-tree", "spine-leaf"])
    b.add_argument("--k", type=int)
    b.add_argument("--cores", type=int)
    b.add_argument("--aggs", type=int)
    b.add_argument("--tors", type=int)
    b.add_argument("--hosts-per-tor", type=int)
    b.add_argument("--spines", type=int)
    b.add_argument("--leaves", type=int)
    b.add_argument("--hosts-per-leaf", type=int)
    b.add_argument("--bandwidth-gbps", type=float)
    b.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="windowed throughput, CDF, traffic matrix, size histogram, classification")
    p.add_argument("--trace", required=True)
    p.add_argument("--window-ms", type=float, default=50)
    p.add_argument("--emit", type=_csv_list, default=list(ANALYSIS_VIEWS))
    p.add_argument("--metric", choices=["bits", "packets"], default="bits")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("classify", help="print the stable/burst/increase classification")
    p.add_argument("--trace", required=True)
    p.add_argument("--window-ms", type=float, default=50)
    p.add_argument("--metric", choices=["bits", "packets"], default="bits")
    p.add_argument("--out")

    p = sub.add_parser("synth", help="generate a synthetic Bernoulli-arrival trace")
    p.add_argument("--model", required=True, choices=["uniform", "permutation", "hotspot", "all-to-one", "one-to-all"])
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--size", default="512", help="preset (dai2012, bitar2014), byte count, or comma list")
    p.add_argument("--duration-ms", type=float, default=100.0)
    p.add_argument("--tick-us", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hotspot-fraction", type=float, default=0.5)
    p.add_argument("--hotspot-node", type=int, default=0)
    p.add_argument("--burst-period-ms", type=float)
    p.add_argument("--burst-length-ms", type=float)
    p.add_argument("--burst-p", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="cut a micro trace or label a component trace")
    p.add_argument("--trace", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--pattern", choices=["stable", "burst", "increase"])
    g.add_argument("--component", action="store_true")
    p.add_argument("--report", help="classification JSON (computed when omitted)")
    p.add_argument("--window-ms", type=float, default=50)
    p.add_argument("--max-duration-ms", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="replay a trace through the switch-network simulator")
    p.add_argument("--trace", required=True)
    p.add_argument("--topo", required=True)
    p.add_argument("--switch", default="s7706")
    p.add_argument("--amplify", type=int, default=1)
    p.add_argument("--amplify-sweep", help="comma list of factors, e.g. 1,2,4; --out becomes a directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--routing", choices=["ecmp", "single"], default="ecmp")
    p.add_argument("--buffer-kb", type=float)
    p.add_argument("--latency-us", type=float)
    p.add_argument("--delay-us", type=float)
    p.add_argument("--port-rate-gbps", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="compute metrics and the normalized device comparison")
    p.add_argument("--results", required=True, help="directory of <device>/<trace>.csv outcome files")
    p.add_argument("--mapping", help="JSON metric -> trace list (default: the AF/WF/LJ/CC/BA trace table)")
    p.add_argument("--window-ms", type=float, default=50)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run a configured pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="run directory (default from config)")

    p = sub.add_parser("export", help="write a trace as CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    return ap


def _dispatch(args) -> int:
    ctx = Context(stage=args.cmd)
    if args.cmd == "ingest":
        stage_ingest(ctx, pcap=args.pcap, port_map=args.port_map, node_key=args.node_key, out=args.out)
    elif args.cmd == "topo":
        params = {
            k: getattr(args, k)
            for k in ("k", "cores", "aggs", "tors", "hosts_per_tor", "spines", "leaves", "hosts_per_leaf")
        }
        if args.bandwidth_gbps is not None:
            params["bandwidth_bps"] = int(args.bandwidth_gbps * 10**9)
        stage_topo(ctx, kind=args.kind, out=args.out, **params)
    elif args.cmd == "analyze":
        stage_analyze(ctx, trace=args.trace, out=args.out, window_ms=args.window_ms, emit=args.emit, metric=args.metric)
    elif args.cmd == "classify":
        rep = stage_classify(ctx, trace=args.trace, out=args.out, window_ms=args.window_ms, metric=args.metric)
        print(json.dumps(rep.to_json_dict(), indent=2, sort_keys=True))
    elif args.cmd == "synth":
        params = {k: v for k, v in vars(args).items() if k not in ("cmd", "quiet", "out", "seed")}
        if params["burst_period_ms"] is None:
            params = {k: v for k, v in params.items() if not k.startswith("burst_")}
        stage_synth(ctx, out=args.out, seed=args.seed, **params)
    elif args.cmd == "extract":
        stage_extract(ctx, trace=args.trace, out=args.out, pattern=args.pattern, component=args.component,
                      report=args.report, window_ms=args.window_ms, max_duration_ms=args.max_duration_ms)
    elif args.cmd == "simulate":
        stage_simulate(ctx, trace=args.trace, topo=args.topo, out=args.out, switch=args.switch, amplify=args.amplify,
                       amplify_sweep=args.amplify_sweep, seed=args.seed, routing=args.routing,
                       buffer_kb=args.buffer_kb, latency_us=args.latency_us, delay_us=args.delay_us,
                       port_rate_gbps=args.port_rate_gbps)
    elif args.cmd == "report":
        stage_report(ctx, results=args.results, mapping=args.mapping, window_ms=args.window_ms, out=args.out)
    elif args.cmd == "run":
        run_dir = run_pipeline(args.config, args.out)
        print(run_dir)
    elif args.cmd == "export":
        with open(args.out, "w") as f:
            f.write(trace_to_csv(read_trace(args.trace)))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args)
    except DCBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
