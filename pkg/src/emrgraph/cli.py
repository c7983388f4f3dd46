"""Command line entry point: ``emrgraph <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage, configuration or query
syntax error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from emrgraph import ntriples, pipeline
from emrgraph.errors import (
    ConfigParseError,
    ConfigValidationError,
    EmrGraphError,
    PipelineError,
    QueryError,
)
from emrgraph.store_query import evaluate, load, parse_query

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline JSON config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--mode", choices=("full", "reduced"), help="temporal construction mode")
    p.add_argument("--seed", type=int, help="seed for verification sampling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emrgraph",
                                     description="Build and query a patient event graph.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("preprocess", "clean the record tables"),
                       ("map", "map preprocessed tables to events.nt"),
                       ("temporal", "build temporal relations into temporal.nt"),
                       ("match", "link entities to the terminology graph"),
                       ("build", "run every stage and write stats.csv")):
        _add_config_flags(sub.add_parser(name, help=text))
    q = sub.add_parser("query", help="evaluate a query file against .nt files")
    q.add_argument("query", help="query file")
    q.add_argument("stores", nargs="+", help=".nt files to load")
    s = sub.add_parser("stats", help="dataset statistics of .nt files")
    s.add_argument("stores", nargs="*", help=".nt files to load")
    s.add_argument("--output", help="write stats CSV here instead of stdout")
    return parser


def _load_store(paths: Sequence[str]):
    triples = []
    for p in paths:
        triples.extend(ntriples.parse_ntriples(Path(p)))
    return load(triples)


def cmd_query(query_path: str, store_paths: Sequence[str], out=None) -> int:
    out = out or sys.stdout
    text = Path(query_path).read_text(encoding="utf-8")
    query = parse_query(text)
    store = _load_store(store_paths)
    out.write(evaluate(store, query).to_text())
    return EXIT_OK


def cmd_stats(store_paths: Sequence[str], output: Optional[str] = None, out=None) -> int:
    out = out or sys.stdout
    stats = pipeline.stats_for_files(store_paths)
    text = stats.to_csv()
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return EXIT_OK


def _run_stage(args) -> int:
    cfg = pipeline.load_pipeline_config(args.config, out=args.out, mode=args.mode, seed=args.seed)
    if args.command == "build":
        stats = pipeline.run_pipeline(cfg)
        sys.stdout.write(stats.to_csv())
        return EXIT_OK
    cfg.validate([args.command])
    cfg.out.mkdir(parents=True, exist_ok=True)
    if args.command == "preprocess":
        pipeline.stage_preprocess(cfg)
    elif args.command == "map":
        pipeline.stage_map(cfg)
    elif args.command == "temporal":
        pipeline.stage_temporal(cfg)
    elif args.command == "match":
        pipeline.stage_match(cfg)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "query":
            return cmd_query(args.query, args.stores)
        if args.command == "stats":
            return cmd_stats(args.stores, args.output)
        return _run_stage(args)
    except (QueryError, ConfigParseError, ConfigValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, EmrGraphError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, PipelineError) and isinstance(
                exc.cause, (ConfigParseError, ConfigValidationError)):
            return EXIT_USAGE
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
