"""Command line: replay, bench-pipeline, generate, stats."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

from . import config as cfgmod
from .predictors import NGramModel
from .replay import bench_channel, bench_pool, bench_socket, build_tree, replay
from .trace import (LIST_OP, TraceFormatError, compute_stats, generate_trace, generate_trace_pair,
                    parse_trace, write_trace)

log = logging.getLogger("metacontinuum")


def _write_rows(rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "metric", "value"])
    for row in rows:
        w.writerow(row)
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _write_json(obj, path):
    if path is None:
        return
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_replay(args) -> int:
    cp = cfgmod.load(args.config, args.set)
    cfg = cfgmod.replay_config(cp)
    trace_sec = dict(cp.items("trace")) if cp.has_section("trace") else {}
    trace_path = args.trace or trace_sec.get("path")
    previous = args.previous or trace_sec.get("previous")
    model_path = args.amp_model or trace_sec.get("amp_model")
    wants_amp = any(getattr(cfg, layer).predictor == "amp" for layer in cfgmod.LAYERS)
    source = {}
    if trace_path:
        events = list(parse_trace(trace_path))
        prev_events = list(parse_trace(previous)) if previous else []
        source = {"trace": trace_path, "previous": previous}
    else:
        spec, seed = cfgmod.trace_spec(cp)
        overlap = float(cfgmod.coerce(cp.get("generate", "overlap", fallback="0.6")))
        if wants_amp and not model_path:
            day1, day2 = generate_trace_pair(spec, seed, overlap)
            prev_events, events = day1.events, day2.events
        else:
            events, prev_events = generate_trace(spec, seed).events, []
        source = {"generate_seed": seed,
                  "generated": {k: list(v) if isinstance(v, tuple) else v for k, v in spec.__dict__.items()}}
    model = None
    if wants_amp:
        if model_path:
            model = NGramModel.load(model_path)
        elif prev_events:
            model = NGramModel.train(e.path for e in prev_events if e.op == LIST_OP)
    tree = build_tree(prev_events, events) if prev_events else build_tree(events)
    report = replay(events, cfg, tree=tree, amp_model=model)
    _write_rows(report.rows(), args.csv)
    summary = {
        "command": "replay",
        "config": cfgmod.as_dict(cfg),
        "seed": cfg.seed,
        "source": source,
        "amp_model_contexts": len(model) if model is not None else 0,
        "metrics": {f"{layer}.{metric}": value for layer, metric, value in report.rows()},
    }
    _write_json(summary, args.json)
    return 0


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def cmd_bench(args) -> int:
    rows, points, latency_rows = [], [], []
    for services in _ints(args.services):
        for cap in _ints(args.capacity):
            if args.mode == "socket":
                res = bench_socket(args.requests, services, cap, args.rtt)
            elif args.mode == "channel":
                res = bench_channel(args.requests, cap, args.rtt)
            else:
                rate = None if args.rate <= 0 else args.rate
                res = bench_pool(args.requests, services, cap, args.rtt, rate, args.seed)
            s = res.summary()
            points.append(s)
            tag = f"s{services}c{cap}"
            for k, v in s.items():
                rows.append((tag, k, v))
            latency_rows += [(tag, i, round(x, 6)) for i, x in enumerate(res.latencies)]
    _write_rows(rows, args.csv)
    if args.latencies:
        with open(args.latencies, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "request", "latency_ms"])
            w.writerows(latency_rows)
    _write_json({"command": "bench-pipeline", "mode": args.mode, "seed": args.seed,
                 "rate_per_s": args.rate, "points": points}, args.json)
    return 0


def cmd_generate(args) -> int:
    cp = cfgmod.load(args.config, args.set)
    spec, seed = cfgmod.trace_spec(cp)
    if args.seed is not None:
        seed = args.seed
    if args.pair:
        overlap = float(cfgmod.coerce(cp.get("generate", "overlap", fallback="0.6")))
        day1, day2 = generate_trace_pair(spec, seed, overlap)
        write_trace(day1.events, args.out)
        write_trace(day2.events, args.pair)
        tallies = {"day1": day1.tallies, "day2": day2.tallies}
    else:
        g = generate_trace(spec, seed)
        write_trace(g.events, args.out)
        tallies = g.tallies
    _write_json({"command": "generate", "seed": seed, "tallies": tallies,
                 "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in spec.__dict__.items()}},
                args.json)
    return 0


def cmd_stats(args) -> int:
    stats = compute_stats(parse_trace(args.trace))
    d = stats.as_dict()
    rows = [("trace", k, d[k]) for k in ("list_ops", "unique_paths", "once_accessed",
                                         "unique_fraction", "once_fraction")]
    rows += [("depth", str(k), v) for k, v in d["depth_distribution"].items()]
    _write_rows(rows, args.csv)
    _write_json(d, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metacontinuum", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def outputs(sp):
        sp.add_argument("--csv", default="-", help="CSV report path (default stdout)")
        sp.add_argument("--json", help="JSON summary path ('-' for stdout)")

    def configured(sp):
        sp.add_argument("--config", help=f"INI config (default ${cfgmod.ENV_VAR})")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")

    r = sub.add_parser("replay", help="replay a trace through a simulated continuum")
    configured(r)
    outputs(r)
    r.add_argument("--trace", help="trace file (default: [trace] path, else generate)")
    r.add_argument("--previous", help="previous day's trace, used to train AMP")
    r.add_argument("--amp-model", help="saved AMP model file")
    r.set_defaults(func=cmd_replay)

    b = sub.add_parser("bench-pipeline", help="latency distribution of pipelined fetches")
    outputs(b)
    b.add_argument("--requests", type=int, default=1000)
    b.add_argument("--rtt", type=float, default=40.0)
    b.add_argument("--services", default="5,30", help="comma separated sweep")
    b.add_argument("--capacity", default="5", help="comma separated sweep")
    b.add_argument("--rate", type=float, default=2500.0, help="arrivals per second; 0 = all at once")
    b.add_argument("--mode", choices=["sim", "channel", "socket"], default="sim")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--latencies", help="per-request latency CSV path")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("generate", help="write a synthetic trace")
    configured(g)
    g.add_argument("--out", required=True)
    g.add_argument("--pair", metavar="DAY2_OUT", help="also write a correlated second day")
    g.add_argument("--seed", type=int)
    g.add_argument("--json", help="JSON summary path ('-' for stdout)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="trace statistics")
    s.add_argument("trace")
    outputs(s)
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench-pipeline" and args.requests < 1:
        print("error: --requests must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, TraceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
