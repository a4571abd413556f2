"""Command-line entry point: ``causal-privacy <verb> ...``.

Exit codes: 0 success, 2 config error, 3 data error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bayesnet import DatasetError, NetworkError, exact_joint, load_network, topological_order
from .experiment import (
    ConfigError,
    ExperimentError,
    load_config,
    records_from_csv,
    run_experiment,
    summarize,
    write_run,
    write_summary,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    out = args.out or config.output or f"runs/{Path(args.config).stem}"
    records = run_experiment(config, seed_offset=args.seed_offset, workers=args.workers)
    path = write_run(records, out)
    summary = summarize(records)
    write_summary(summary, out)
    print(summary.text, end="")
    print(f"wrote {len(records)} rows to {path}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    directory = Path(args.dir)
    results = directory / "results.csv" if directory.is_dir() else directory
    try:
        text = results.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read results: {exc}") from None
    try:
        records = records_from_csv(text)
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"malformed results file {results}: {exc}") from None
    if not records:
        raise DatasetError(f"{results} has no rows")
    summary = summarize(records)
    write_summary(summary, args.out or results.parent)
    print(summary.text, end="")
    return EXIT_OK


def _cmd_validate_net(args) -> int:
    net = load_network(args.file)
    print(
        f"ok: {len(net.nodes)} nodes, {net.n_arcs} arcs, {net.n_parameters} parameters; "
        f"outcome {net.outcome} ({net.n_classes} classes) with parents {', '.join(net.outcome_parents) or '(none)'}"
    )
    print("order: " + " ".join(topological_order(net)))
    return EXIT_OK


def _cmd_oracle_joint(args) -> int:
    net = load_network(args.file)
    joint = exact_joint(net)
    lines = [",".join(joint.names) + ",probability"]
    for states, p in joint.items():
        lines.append(",".join(str(s) for s in states) + f",{p!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(lines) - 1} states (total mass {float(np.sum(joint.probs)):.12f}) to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causal-privacy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment grid from an INI config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: config 'output' or runs/<config name>)")
    run.add_argument("--workers", type=int, help="parallel grid cells (overrides config)")
    run.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    run.set_defaults(func=_cmd_run)

    summ = sub.add_parser("summarize", help="summarize a results directory or CSV")
    summ.add_argument("dir")
    summ.add_argument("--out", help="where to write summary files (default: alongside the CSV)")
    summ.set_defaults(func=_cmd_summarize)

    val = sub.add_parser("validate-net", help="parse and check a network file")
    val.add_argument("file")
    val.set_defaults(func=_cmd_validate_net)

    oracle = sub.add_parser("oracle-joint", help="print the exact joint distribution of a small network")
    oracle.add_argument("file")
    oracle.add_argument("--out", help="write CSV here instead of stdout")
    oracle.set_defaults(func=_cmd_oracle_joint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NetworkError, DatasetError, ExperimentError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
