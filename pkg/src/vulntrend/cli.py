"""Command-line interface: ``vulntrend <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import DEFAULT_CONFIG_PATH, AppConfig, load_config, use_fixtures
from .errors import ConfigError, InvalidMonth, RulesError, StorageError, VulntrendError
from .ingest import (
    Daemon,
    IngestSummary,
    Pipeline,
    SourceStatus,
    load_status,
    status_path_for,
)
from .report import FORMATS, render_report
from .store import RecordStore
from .taxonomy import VulnClass, classify, default_ruleset, load_rules
from .timeutil import Month, format_minute, format_seconds

log = logging.getLogger("vulntrend")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # shared by the top-level parser and every subcommand, so flags work on either side
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=d(None), help=f"config file (default ./{DEFAULT_CONFIG_PATH})")
    g.add_argument("--fixtures", type=Path, default=d(None), help="read every source from <dir>/<source-id>/*.html")
    g.add_argument("--store", type=Path, default=d(None), help="record store file (overrides config)")
    g.add_argument("--rules", type=Path, default=d(None), help="keyword rules file (overrides config)")
    g.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        default=d([]),
        help="override any config field, e.g. dedup.threshold=0.9 or sources.zeroday.enabled=false",
    )
    g.add_argument("-v", "--verbose", action="count", default=d(0), help="more logging on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    sub_common = _global_flags(defaults=False)
    parser = argparse.ArgumentParser(
        prog="vulntrend",
        description="Crawl vulnerability listings, classify and deduplicate them, and report monthly trends.",
        parents=[_global_flags(defaults=True)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = subs.add_parser("classify", parents=[sub_common], help="print the class of a vulnerability title")
    p.add_argument("text", help="free text, typically a listing title")

    p = subs.add_parser("ingest", parents=[sub_common], help="fetch, classify and store new entries")
    p.add_argument("--source", dest="source_id", help="only this source id (default: all enabled)")
    p.add_argument("--once", action="store_true", help="single pass per source instead of polling")

    p = subs.add_parser("watch", parents=[sub_common], help="poll all enabled sources until interrupted")
    p.add_argument("--cycles", type=int, default=None, help="stop after N polls per source")

    p = subs.add_parser("report", parents=[sub_common], help="write monthly JSON/SVG/HTML reports")
    p.add_argument("--month", dest="months", action="append", required=True, metavar="YYYY-MM", help="repeatable")
    p.add_argument(
        "--format",
        dest="formats",
        action="append",
        metavar="FMT[,FMT]",
        help=f"any of {', '.join(FORMATS)}; repeatable or comma-separated (default from config)",
    )
    p.add_argument("--out", type=Path, default=Path("report"), help="output directory (default ./report)")
    p.add_argument("--top", dest="k", type=int, default=None, help="length of the top-k table")
    p.add_argument("--peak-factor", type=float, default=None, help="spike factor over the trailing mean")

    subs.add_parser("status", parents=[sub_common], help="show per-source poller status")

    p = subs.add_parser("last", parents=[sub_common], help="list the most recent records of one class")
    p.add_argument("--class", dest="class_name", required=True, help="canonical class name, e.g. xss")
    p.add_argument("-n", type=int, default=50, help="how many records (default 50)")
    return parser


def _config(args: argparse.Namespace, need_sources: bool = False) -> AppConfig:
    explicit = args.config is not None
    path = args.config if explicit else DEFAULT_CONFIG_PATH
    cfg = load_config(path, args.overrides, required=explicit or need_sources)
    if args.store is not None:
        cfg.store_path = args.store
    if args.rules is not None:
        cfg.rules_path = args.rules
    if need_sources:
        cfg.require_sources()
    if args.fixtures is not None:
        use_fixtures(cfg, args.fixtures)
    return cfg


def _rules(cfg: AppConfig):
    return load_rules(cfg.rules_path) if cfg.rules_path else default_ruleset()


def cmd_classify(args: argparse.Namespace) -> int:
    cfg = _config(args)
    print(classify(args.text, _rules(cfg)).vuln_class.value)
    return EXIT_OK


def _pipeline(cfg: AppConfig, store: RecordStore) -> Pipeline:
    return Pipeline(store, rules=_rules(cfg), dedup=cfg.dedup, policy=cfg.fetch)


def _status_line(summary: IngestSummary, status: SourceStatus) -> str:
    return (
        f"{format_seconds(summary.finished_at or summary.started_at)} {status.source_id} "
        f"state={status.state.value} uptime={status.uptime_seconds:.0f}s "
        f"failures={status.consecutive_failures} total={status.total_records_ingested} "
        f"appended={summary.records_appended}" + (f" error={summary.error}" if summary.error else "")
    )


def _run_daemon(cfg: AppConfig, sources, cycles: Optional[int]) -> int:
    with RecordStore(cfg.store_path) as store:
        store.open_for_append()
        daemon = Daemon(
            _pipeline(cfg, store),
            sources,
            on_cycle=lambda s, st: print(_status_line(s, st), flush=True),
            status_path=status_path_for(cfg.store_path),
        )
        previous = signal.signal(signal.SIGTERM, lambda *_: daemon.stop())
        try:
            daemon.run(max_cycles=cycles)
        finally:
            signal.signal(signal.SIGTERM, previous)
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _config(args, need_sources=True)
    sources = [cfg.source(args.source_id)] if args.source_id else [s for s in cfg.sources if s.enabled]
    if not args.once:
        return _run_daemon(cfg, sources, None)
    failed = False
    with RecordStore(cfg.store_path) as store:
        store.open_for_append()
        pipeline = _pipeline(cfg, store)
        for source in sources:
            summary = pipeline.run_once(source)
            print(summary.log_line(), flush=True)
            failed |= not summary.ok
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_watch(args: argparse.Namespace) -> int:
    cfg = _config(args, need_sources=True)
    if args.cycles is not None and args.cycles < 1:
        raise ConfigError("--cycles must be >= 1")
    return _run_daemon(cfg, cfg.sources, args.cycles)


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _config(args)
    months = [Month.parse(m) for m in args.months]
    if args.formats:
        formats = [f.strip() for chunk in args.formats for f in chunk.split(",") if f.strip()]
    else:
        formats = list(cfg.report_formats)
    unknown = sorted(set(formats) - set(FORMATS))
    if unknown:
        raise ConfigError(f"unknown report format(s): {', '.join(unknown)}; choose from {', '.join(FORMATS)}")
    settings = cfg.report
    if args.k is not None or args.peak_factor is not None:
        settings = replace(
            settings,
            k=args.k if args.k is not None else settings.k,
            peak_factor=args.peak_factor if args.peak_factor is not None else settings.peak_factor,
        )
    store = RecordStore(cfg.store_path)
    for path in render_report(store, months, args.out, formats, settings):
        print(path)
    return EXIT_OK


def cmd_status(args: argparse.Namespace) -> int:
    cfg = _config(args)
    rows = load_status(status_path_for(cfg.store_path), [s.id for s in cfg.sources])
    print(f"{'SOURCE':<16} {'STATE':<11} {'UPTIME':>9} {'FAILS':>5} {'RECORDS':>7}  LAST SUCCESS / LAST ERROR")
    for st in rows:
        last = format_seconds(st.last_success_at) if st.last_success_at else "-"
        if st.last_error and st.consecutive_failures:
            last = f"{last} / {st.last_error}"
        print(
            f"{st.source_id:<16} {st.state.value:<11} {st.uptime_seconds:>8.0f}s "
            f"{st.consecutive_failures:>5} {st.total_records_ingested:>7}  {last}"
        )
    return EXIT_OK


def cmd_last(args: argparse.Namespace) -> int:
    try:
        cls = VulnClass.from_name(args.class_name)
    except ValueError as exc:
        print(f"vulntrend: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.n < 1:
        raise ConfigError("-n must be >= 1")
    cfg = _config(args)
    for rec in RecordStore(cfg.store_path).last_n_by_class(cls, args.n):
        print(f"{format_minute(rec.observed_at)}\t{rec.source_id}\t{rec.discoverer}\t{rec.title}")
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "ingest": cmd_ingest,
    "watch": cmd_watch,
    "report": cmd_report,
    "status": cmd_status,
    "last": cmd_last,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidMonth, RulesError) as exc:
        print(f"vulntrend: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StorageError as exc:
        print(f"vulntrend: storage failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (VulntrendError, OSError) as exc:
        print(f"vulntrend: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
