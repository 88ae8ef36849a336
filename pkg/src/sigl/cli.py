"""Command line front end: ``sigl <subcommand> ...``.

Exit status: 0 success or benign verdict, 2 abnormal verdict, 1 error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import synth
from .audit import read_events, write_events
from .graph import to_dot
from .pipeline import (Bundle, InsufficientData, PipelineConfig, load_corpus, load_trace,
                       train_bundle, trace_graph, evaluate)

EXIT_OK, EXIT_ERROR, EXIT_ABNORMAL = 0, 1, 2


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="INI file with pipeline settings")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--threshold-multiplier", type=float, default=default)
    parser.add_argument("--time-bound", type=float, default=default,
                        help="service dependency window in seconds")
    parser.add_argument("--dot", metavar="OUT", default=default,
                        help="write a Graphviz rendering of the graph")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigl", description="Malicious installer detection "
                                     "from audit-event provenance graphs.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = add("ingest", "validate and normalize an event trace")
    p.add_argument("trace")
    p.add_argument("-o", "--out", help="write normalized JSONL here")
    p.add_argument("--permissive", action="store_true", help="skip malformed records")

    p = add("build-sig", "build the installation graph of a trace")
    p.add_argument("trace")
    p.add_argument("-t", "--target", action="append", help="installed file name (repeatable)")
    p.add_argument("-o", "--out", help="write graph JSON here instead of stdout")

    p = add("synth", "generate a synthetic installation trace")
    p.add_argument("--template", required=True, choices=sorted(synth.TEMPLATES))
    p.add_argument("--inject", choices=("bundle", "embed"))
    p.add_argument("--profile", default="dropper", choices=sorted(synth.PROFILES))
    p.add_argument("--count", type=int, default=1, help="consecutive seeds to generate")
    p.add_argument("-o", "--out", default=".", help="output directory")

    p = add("train", "train a model bundle from benign traces")
    p.add_argument("traces", help="directory of benign *.jsonl traces")
    p.add_argument("-b", "--bundle", required=True, help="output bundle directory")
    p.add_argument("--split", help="train,validation,test ratios, e.g. 0.8,0.2,0")

    for name, help_ in (("detect", "score one trace (JSON report)"),
                        ("rank", "score one trace (ranked table)")):
        p = add(name, help_)
        p.add_argument("trace")
        p.add_argument("-b", "--bundle", required=True)
        p.add_argument("-t", "--target", action="append")
        p.add_argument("--top", type=int, default=10, help="processes to show / highlight")

    p = add("eval", "evaluate a bundle on a labeled corpus")
    p.add_argument("corpus", help="directory of *.jsonl traces with .labels.json sidecars")
    p.add_argument("-b", "--bundle", required=True)
    p.add_argument("-o", "--out", help="write per-graph results JSON here")
    return parser


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return _override(cfg, args)


def _override(cfg: PipelineConfig, args) -> PipelineConfig:
    return cfg.replace(seed=args.seed, time_bound=args.time_bound,
                       threshold_multiplier=args.threshold_multiplier)


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def cmd_ingest(args) -> int:
    events = read_events(args.trace, permissive=args.permissive)
    if args.out:
        write_events(args.out, events)
    kinds: dict[str, int] = {}
    for e in events:
        kinds[e.relation.value] = kinds.get(e.relation.value, 0) + 1
    print(json.dumps({"events": len(events), "relations": dict(sorted(kinds.items()))}))
    return EXIT_OK


def cmd_build_sig(args) -> int:
    cfg = _config(args)
    sig = trace_graph(read_events(args.trace), cfg, args.target)
    if args.out:
        _write(args.out, sig.to_json())
    else:
        print(sig.to_json())
    if args.dot:
        _write(args.dot, to_dot(sig))
    return EXIT_OK


def cmd_synth(args) -> int:
    template = synth.TEMPLATES[args.template]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed0 = args.seed if args.seed is not None else 0
    for seed in range(seed0, seed0 + args.count):
        if args.inject:
            trace = synth.gen_malicious_trace(template, seed, args.inject, args.profile)
            stem = f"{args.template}-{args.inject}-{args.profile}-{seed}"
        else:
            trace = synth.gen_benign_trace(template, seed)
            stem = f"{args.template}-benign-{seed}"
        paths = trace.write(out / stem)
        print(paths[0])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.split:
        ratios = [float(x) for x in args.split.split(",")]
        if len(ratios) == 2:
            ratios.append(0.0)
        cfg = cfg.replace(train_ratio=ratios[0], validation_ratio=ratios[1], test_ratio=ratios[2])
    traces = load_corpus(args.traces)
    bundle = train_bundle(traces, cfg)
    bundle.save(args.bundle)
    print(json.dumps({"bundle": str(args.bundle), "threshold": bundle.threshold.value,
                      **{k: len(v) for k, v in bundle.splits.items()}}))
    return EXIT_OK


def _load_bundle(args) -> Bundle:
    bundle = Bundle.load(args.bundle)
    if args.time_bound is not None:
        bundle = dataclasses.replace(bundle, config=bundle.config.replace(
            time_bound=args.time_bound))
    return bundle


def cmd_detect(args, table: bool = False) -> int:
    bundle = _load_bundle(args)
    trace = load_trace(args.trace)
    report, sig = bundle.detect(trace.events, args.target, graph_id=trace.name,
                                multiplier=args.threshold_multiplier)
    print(report.table(args.top) if table else report.to_json())
    if args.dot:
        _write(args.dot, to_dot(sig, report.losses, args.top))
    return EXIT_ABNORMAL if report.abnormal else EXIT_OK


def cmd_eval(args) -> int:
    bundle = _load_bundle(args)
    result = evaluate(bundle, load_corpus(args.corpus), multiplier=args.threshold_multiplier)
    metrics = {k: v for k, v in result.metrics.items() if k != "guidance_per_graph"}
    print(json.dumps(metrics, indent=1))
    if args.out:
        _write(args.out, json.dumps(result.to_dict(), indent=1))
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "build-sig": cmd_build_sig,
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "rank": lambda a: cmd_detect(a, table=True),
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InsufficientData, ValueError, KeyError, OSError, ArithmeticError) as exc:
        if args.verbose:
            raise
        name = type(exc).__name__
        msg = exc.args[0] if exc.args else ""
        print(f"sigl: error: {name}: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
