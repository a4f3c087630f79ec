"""Command line entry point: ``distbn run | gen-net | validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import CapacityError, DistBNError
from .harness import ExperimentConfig, emit_report, make_new_alarm, resolve_network, run_experiment
from .tracker import ALGORITHMS

EXIT_OK, EXIT_INVALID, EXIT_CAPACITY = 0, 1, 2


def _int_list(text: str) -> list[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distbn", description="Distributed Bayesian network tracking experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write a CSV report")
    run.add_argument("--network", required=True, help="network JSON path or bundled name (alarm, new_alarm)")
    run.add_argument("--algorithms", default="exact,baseline,uniform,nonuniform", help=f"comma list from {ALGORITHMS}")
    run.add_argument("--epsilon", type=float, default=0.1)
    run.add_argument("--delta", type=float, default=0.25)
    run.add_argument("--sites", type=int, default=30)
    run.add_argument("--events", type=lambda s: int(float(s)), default=500_000)
    run.add_argument("--checkpoints", type=_int_list, default=None, help="comma list of stream positions")
    run.add_argument("--queries", type=int, default=1000)
    run.add_argument("--min-prob", type=float, default=0.01)
    run.add_argument("--classify-trials", type=int, default=0)
    run.add_argument("--classification-mode", action="store_true", help="build counters at epsilon/4")
    run.add_argument("--seeds", type=int, default=1, help="number of runs; a median row is added per checkpoint")
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--out", default="report.csv")

    gen = sub.add_parser("gen-net", help="generate a derived network")
    gen.add_argument("kind", choices=["new-alarm"])
    gen.add_argument("--base", default="alarm")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--out", required=True)

    val = sub.add_parser("validate", help="check a network file")
    val.add_argument("--network", required=True)
    return parser


def _run(args) -> int:
    config = ExperimentConfig(
        network=args.network,
        algorithms=args.algorithms.split(","),
        epsilon=args.epsilon,
        delta=args.delta,
        sites=args.sites,
        events=args.events,
        checkpoints=args.checkpoints,
        queries=args.queries,
        min_prob=args.min_prob,
        classify_trials=args.classify_trials,
        seeds=args.seeds,
        seed=args.seed,
        out=args.out,
        classification_mode=args.classification_mode,
    )
    report = run_experiment(config)
    emit_report(report, args.out)
    print(f"wrote {len(report.rows)} rows to {args.out}")
    return EXIT_OK


def _gen_net(args) -> int:
    net = make_new_alarm(resolve_network(args.base), seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(net.to_document(), fh)
    print(f"wrote {net.name} ({net.n} nodes, {net.parameter_count} parameters) to {args.out}")
    return EXIT_OK


def _validate(args) -> int:
    net = resolve_network(args.network)
    print(f"{net.name}: {net.n} nodes, {len(net.edges)} edges, {net.parameter_count} parameters, max in-degree {net.d}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": _run, "gen-net": _gen_net, "validate": _validate}[args.command]
    try:
        return handler(args)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (DistBNError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
