"""Command line entry point: ``nonce-audit {scan,summarize,histogram,simulate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .crawler import CrawlBudget, SiteTarget
from .reporting import StorageError, load_site_rows, rank_histogram, summarize, write_histogram
from .scanner import ScanConfig, read_targets, run_scan

log = logging.getLogger("nonce_audit")


def _scan(args) -> int:
    if args.domain:
        targets = [SiteTarget(args.domain)]
    else:
        targets = read_targets(args.targets, limit=args.limit)
    if not targets:
        print("no targets to scan", file=sys.stderr)
        return 2
    config = ScanConfig(
        budget=CrawlBudget(
            max_subdomains=args.max_subdomains,
            max_pages_per_subdomain=args.max_pages,
            max_depth=args.max_depth,
            request_timeout=args.timeout_secs,
            min_request_interval=args.interval_ms,
        ),
        scheme=args.scheme,
        respect_robots=not args.ignore_robots,
        user_agent=args.user_agent,
        proxy=args.proxy,
        probe_delay_ms=args.probe_delay_ms,
        store_bodies=not args.no_bodies,
        verify_tls=not args.insecure,
    )
    try:
        summary, _ = run_scan(targets, config, args.output, workers=args.workers)
    except StorageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary.to_json(), end="")
    return 0


def _summarize(args) -> int:
    rows = load_site_rows(args.out)
    if not rows:
        print(f"no site records under {args.out}", file=sys.stderr)
        return 1
    print(summarize(rows).to_json(), end="")
    return 0


def _histogram(args) -> int:
    rows = load_site_rows(args.out)
    histogram = rank_histogram(rows, bucket_size=args.bucket_size)
    if args.write:
        write_histogram(args.out, histogram)
    print(histogram.to_csv(), end="")
    return 0


def _simulate(args) -> int:
    from .simulator import default_matrix, load_scenarios, serve_forever

    scenarios = load_scenarios(args.config) if args.config else default_matrix()
    for s in scenarios:
        print(f"{s.name}.{args.base_domain}  mode={s.nonce_mode.value} cache={s.cache.value}", file=sys.stderr)
    print(f"use http://{args.host}:{args.port} as the scanner's HTTP proxy", file=sys.stderr)
    try:
        serve_forever(scenarios, args.host, args.port, args.base_domain)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonce-audit", description="Audit CSP nonce usage of websites.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="crawl and probe sites")
    which = scan.add_mutually_exclusive_group(required=True)
    which.add_argument("--targets", help="CSV toplist with rank,domain rows")
    which.add_argument("--domain", help="scan a single site")
    scan.add_argument("--limit", type=int, help="only the first N targets of --targets")
    scan.add_argument("--max-subdomains", type=int, default=10)
    scan.add_argument("--max-pages", type=int, default=10, help="pages per subdomain")
    scan.add_argument("--max-depth", type=int, default=None)
    scan.add_argument("--timeout-secs", type=float, default=10.0)
    scan.add_argument("--interval-ms", type=float, default=200, help="minimum gap between requests to one site")
    scan.add_argument("--probe-delay-ms", type=float, default=0, help="extra delay between probe requests")
    scan.add_argument("--ignore-robots", action="store_true")
    scan.add_argument("--scheme", choices=("auto", "https", "http"), default="auto")
    scan.add_argument("--user-agent", default=ScanConfig.user_agent)
    scan.add_argument("--proxy", help="HTTP proxy for all requests (the simulator URL, for instance)")
    scan.add_argument("--insecure", action="store_true", help="skip TLS certificate verification")
    scan.add_argument("--no-bodies", action="store_true", help="store body hashes instead of bodies")
    scan.add_argument("--workers", type=int, default=4, help="sites scanned concurrently")
    scan.add_argument("--output", default="nonce-audit-out")
    scan.set_defaults(func=_scan)

    summ = sub.add_parser("summarize", help="recompute summary.json from records")
    summ.add_argument("out")
    summ.set_defaults(func=_summarize)

    hist = sub.add_parser("histogram", help="reuse rate per rank bucket")
    hist.add_argument("out")
    hist.add_argument("--bucket-size", type=int, default=5000)
    hist.add_argument("--write", action="store_true", help="also rewrite <out>/histogram.csv")
    hist.set_defaults(func=_histogram)

    sim = sub.add_parser("simulate", help="run the target simulator")
    sim.add_argument("--config", help="scenario file (YAML or JSON); default: bundled matrix")
    sim.add_argument("--port", type=int, default=8080)
    sim.add_argument("--host", default="127.0.0.1")
    sim.add_argument("--base-domain", default="sim.test")
    sim.set_defaults(func=_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
