"""Run the crawl, probe and classification pipeline over one or many sites."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .classifier import PageResult, SiteReport, aggregate_site, classify_pages
from .crawler import CrawlBudget, CrawlResult, PageVisit, SiteTarget, crawl_site
from .probe import DEFAULT_USER_AGENT, Session, run_probe_sequence
from .reporting import SiteWriter, rank_histogram, summarize, write_histogram, write_summary, RunSummary

log = logging.getLogger(__name__)


@dataclass
class ScanConfig:
    budget: CrawlBudget = field(default_factory=CrawlBudget)
    scheme: str = "auto"  # "auto" tries https first, then http
    respect_robots: bool = True
    user_agent: str = DEFAULT_USER_AGENT
    proxy: str | None = None
    probe_delay_ms: float = 0
    store_bodies: bool = True
    verify_tls: bool = True

    def new_session(self) -> Session:
        return Session(
            user_agent=self.user_agent,
            timeout=self.budget.request_timeout,
            min_interval_ms=self.budget.min_request_interval,
            probe_delay_ms=self.probe_delay_ms,
            proxy=self.proxy,
            verify=self.verify_tls,
        )


@dataclass
class SiteScan:
    report: SiteReport
    crawl: CrawlResult


def _page_from_visit(visit: PageVisit) -> PageResult:
    page = PageResult(visit.url, crawl_error=visit.error)
    if visit.policies is not None:
        page.policies = list(visit.policies.policies)
        page.enforcement = bool(visit.policies.enforced)
        page.report_only = bool(visit.policies.report_only)
        page.findings = list(visit.policies.findings)
    page.uses_nonce = visit.nonce_found
    return page


def scan_site(target: SiteTarget, config: ScanConfig) -> SiteScan:
    with config.new_session() as session:
        crawl = crawl_site(target, config.budget, session, config.scheme, config.respect_robots)
        pages = []
        for visit in crawl.pages:
            page = _page_from_visit(visit)
            if visit.nonce_found:
                page.probe = run_probe_sequence(visit.url, session)
            pages.append(page)
    classify_pages(pages)
    return SiteScan(aggregate_site(pages, target, crawl.site_error), crawl)


def _safe_scan(target: SiteTarget, config: ScanConfig) -> SiteScan:
    try:
        return scan_site(target, config)
    except Exception:
        log.exception("scan of %s failed", target.registrable_domain)
        return SiteScan(SiteReport(target, site_error="internal_error"), CrawlResult(target, site_error="internal_error"))


def run_scan(
    targets: Iterable[SiteTarget],
    config: ScanConfig,
    out_dir: str | Path,
    workers: int = 4,
) -> tuple[RunSummary, list[SiteReport]]:
    """Scan sites concurrently; this thread is the only writer to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    targets = list(targets)
    reports = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {pool.submit(_safe_scan, t, config): t for t in targets}
        for future in as_completed(futures):
            scan = future.result()
            writer = SiteWriter(out, scan.report.target.registrable_domain, config.store_bodies)
            writer.write_site(scan.report, scan.crawl.errors)
            reports.append(scan.report)
            log.info("%s: csp=%s nonce=%s reuse=%s", scan.report.target.registrable_domain,
                     scan.report.uses_csp, scan.report.uses_nonce, scan.report.reuses_nonce)
    summary = summarize(reports)
    write_summary(out, summary)
    write_histogram(out, rank_histogram(reports))
    return summary, reports


def read_targets(path: str | Path, limit: int | None = None) -> list[SiteTarget]:
    """Read a ``rank,domain`` list (Tranco format); a header row is tolerated."""
    targets = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or not row[0].strip().isdigit():
                continue
            try:
                targets.append(SiteTarget(row[1], int(row[0])))
            except ValueError as exc:
                log.warning("skipping target %r: %s", row, exc)
            if limit is not None and len(targets) >= limit:
                break
    return targets
