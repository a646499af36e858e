"""Evidence files, JSON Lines records, run summary and the rank histogram.

Output layout::

    <out>/<domain>/records.jsonl          one JSON object per line
    <out>/<domain>/evidence/<sha256(url)>_<probe index>.http
    <out>/summary.json
    <out>/histogram.csv

Every ``records.jsonl`` holds ``"type": "page"`` records in crawl order
followed by exactly one ``"type": "site"`` record. The summary is a pure
function of the site records, so ``nonce-audit summarize`` can rebuild it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping

from .classifier import PageResult, SiteReport
from .probe import PROBE_LABELS, ProbeResponse

log = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
EVIDENCE_DIR = "evidence"
SUMMARY_FILE = "summary.json"
HISTOGRAM_FILE = "histogram.csv"
BUCKET_SIZE = 5000


class StorageError(RuntimeError):
    pass


def percent(count: int, total: int) -> float | None:
    """count/total as a percentage, rounded half-up to one decimal."""
    if not total:
        return None
    value = (Decimal(count) * 100 / Decimal(total)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return float(value)


def url_digest(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


def render_http(response: ProbeResponse, store_body: bool = True) -> str:
    lines = [f"HTTP/1.1 {response.status} {response.reason}".rstrip()]
    lines += [f"{name}: {value}" for name, value in response.headers]
    if store_body:
        body = response.body
    else:
        body = f"[body omitted] sha256={hashlib.sha256(response.body.encode('utf-8')).hexdigest()}\n"
    return "\n".join(lines) + "\n\n" + body


def _policy_dict(policy) -> dict:
    return {
        "raw": policy.raw,
        "disposition": policy.disposition.value,
        "delivery": policy.delivery.value,
        "warnings": list(policy.warnings),
    }


def page_record(page: PageResult, evidence: Mapping[int, str] | None = None) -> dict:
    record = {
        "type": "page",
        "url": page.url,
        "crawl_error": page.crawl_error,
        "enforcement": page.enforcement,
        "report_only": page.report_only,
        "uses_nonce": page.uses_nonce,
        "findings": list(page.findings),
        "policies": [_policy_dict(p) for p in page.policies],
        "probe": None,
        "reuse": page.reuse,
        "cause": page.cause.to_dict() if page.cause else None,
        "session_scope": page.session_scope.to_dict() if page.session_scope else None,
        "nonce_lengths": {v: {"useful_chars": l.useful_chars, "is_short": l.is_short,
                              "estimated_bits": l.estimated_bits} for v, l in page.lengths.items()},
        "nonce_validity": {v: {"is_valid": c.is_valid, "offending_chars": sorted(c.offending_chars),
                               "notes": list(c.notes)} for v, c in page.validity.items()},
    }
    probe = page.probe
    if probe is not None:
        evidence = evidence or {}
        record["probe"] = {
            "cache_buster_url": probe.cache_buster_url,
            "errors": {str(i): kind for i, kind in sorted(probe.errors.items())},
            "responses": {
                str(i): {"label": PROBE_LABELS[i], "evidence": evidence.get(i), **r.to_dict()}
                for i, r in sorted(probe.responses.items())
            },
            "nonces": {
                str(i): [{"value": o.value, "location": o.location.value, "directive": o.directive} for o in obs]
                for i, obs in sorted(probe.nonces.items())
            },
        }
    return record


def site_record(report: SiteReport, crawl_errors: Iterable[tuple[str, str]] = ()) -> dict:
    return {
        "type": "site",
        **report.summary_fields(),
        "cause_detail": report.cause.to_dict() if report.cause else None,
        "pages": len(report.pages),
        "crawl_errors": [list(e) for e in crawl_errors],
    }


class SiteWriter:
    """Append-only record stream and evidence files for one site."""

    def __init__(self, out_dir: str | Path, domain: str, store_bodies: bool = True):
        self.root = Path(out_dir) / domain
        self.evidence_dir = self.root / EVIDENCE_DIR
        self.store_bodies = store_bodies
        try:
            self.evidence_dir.mkdir(parents=True, exist_ok=True)
            # a rerun into the same directory replaces the stream
            (self.root / RECORDS_FILE).write_text("", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot prepare output for {domain} in {out_dir}: {exc}") from exc

    @property
    def records_path(self) -> Path:
        return self.root / RECORDS_FILE

    def _append(self, record: dict) -> None:
        try:
            with self.records_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        except OSError as exc:
            raise StorageError(f"cannot append to {self.records_path}: {exc}") from exc

    def write_evidence(self, page: PageResult) -> dict[int, str]:
        written = {}
        if page.probe is None:
            return written
        digest = url_digest(page.url)
        for index, response in sorted(page.probe.responses.items()):
            name = f"{digest}_{index}.http"
            try:
                (self.evidence_dir / name).write_text(
                    render_http(response, self.store_bodies), encoding="utf-8", newline=""
                )
            except OSError as exc:
                raise StorageError(f"cannot write evidence {name}: {exc}") from exc
            written[index] = f"{EVIDENCE_DIR}/{name}"
        return written

    def write_page_record(self, page: PageResult) -> dict:
        record = page_record(page, self.write_evidence(page))
        self._append(record)
        return record

    def write_site_record(self, report: SiteReport, crawl_errors: Iterable[tuple[str, str]] = ()) -> dict:
        record = site_record(report, crawl_errors)
        self._append(record)
        return record

    def write_site(self, report: SiteReport, crawl_errors: Iterable[tuple[str, str]] = ()) -> None:
        for page in report.pages:
            self.write_page_record(page)
        self.write_site_record(report, crawl_errors)


def _rows(reports: Iterable[SiteReport | Mapping]) -> list[Mapping]:
    return [r.summary_fields() if isinstance(r, SiteReport) else r for r in reports]


@dataclass(frozen=True)
class RunSummary:
    counts: dict[str, int]

    # (percentage name, numerator, denominator)
    RATIOS = (
        ("enforcement", "enforcement", "sites_using_csp"),
        ("report_only", "report_only", "sites_using_csp"),
        ("sites_with_nonces", "sites_with_nonces", "sites_using_csp"),
        ("sites_reusing", "sites_reusing", "sites_using_csp"),
        ("sites_reusing_of_nonce_sites", "sites_reusing", "sites_with_nonces"),
        ("reuse_cache", "reuse_cache", "sites_reusing"),
        ("reuse_server_side", "reuse_server_side", "sites_reusing"),
        ("cached_nonce_observed", "cached_nonce_observed", "sites_reusing"),
        ("same_session", "same_session", "sites_reusing"),
        ("cross_session", "cross_session", "sites_reusing"),
        ("short_nonce", "short_nonce", "sites_with_nonces"),
        ("length8_nonce", "length8_nonce", "sites_with_nonces"),
        ("invalid_nonce", "invalid_nonce", "sites_with_nonces"),
    )

    def __getitem__(self, key: str) -> int:
        return self.counts[key]

    def percentages(self) -> dict[str, float | None]:
        return {name: percent(self.counts[num], self.counts[den]) for name, num, den in self.RATIOS}

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "percentages": self.percentages()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def summarize(reports: Iterable[SiteReport | Mapping]) -> RunSummary:
    rows = _rows(reports)
    ok = [r for r in rows if not r.get("site_error")]
    csp = [r for r in ok if r["uses_csp"]]
    nonce = [r for r in csp if r["uses_nonce"]]
    reuse = [r for r in nonce if r["reuses_nonce"]]
    counts = {
        "sites_scanned": len(rows),
        "site_errors": len(rows) - len(ok),
        "sites_using_csp": len(csp),
        # mixed sites count as enforcing
        "enforcement": sum(1 for r in csp if r["enforcement_seen"]),
        "report_only": sum(1 for r in csp if not r["enforcement_seen"]),
        "sites_with_nonces": len(nonce),
        "sites_reusing": len(reuse),
        "reuse_cache": sum(1 for r in reuse if r["cause"] == "Cache"),
        "reuse_server_side": sum(1 for r in reuse if r["cause"] == "ServerSide"),
        "reuse_probable": sum(1 for r in reuse if r["cause_confidence"] == "Probable"),
        "cached_nonce_observed": sum(1 for r in reuse if r["cached_nonce_observed"]),
        "same_session": sum(1 for r in reuse if r["session_scope"] == "SameSessionOnly"),
        "cross_session": sum(1 for r in reuse if r["session_scope"] == "CrossSession"),
        "session_unknown": sum(1 for r in reuse if r["session_scope"] in (None, "Unknown")),
        "short_nonce": sum(1 for r in nonce if r["short_nonce"]),
        "length8_nonce": sum(1 for r in nonce if r["length8_nonce"]),
        "invalid_nonce": sum(1 for r in nonce if r["invalid_nonce"]),
    }
    return RunSummary(counts)


@dataclass(frozen=True)
class Bucket:
    start: int | None  # None for the unranked bucket
    end: int | None
    nonce_sites: int
    reusing_sites: int

    @property
    def reuse_pct(self) -> float:
        return percent(self.reusing_sites, self.nonce_sites) or 0.0


@dataclass(frozen=True)
class RankHistogram:
    bucket_size: int
    buckets: list[Bucket] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["bucket_start", "bucket_end", "nonce_sites", "reusing_sites", "reuse_pct"])
        for b in self.buckets:
            start = "unranked" if b.start is None else b.start
            end = "" if b.end is None else b.end
            writer.writerow([start, end, b.nonce_sites, b.reusing_sites, f"{b.reuse_pct:.1f}"])
        return out.getvalue()


def rank_histogram(reports: Iterable[SiteReport | Mapping], bucket_size: int = BUCKET_SIZE) -> RankHistogram:
    rows = [r for r in _rows(reports) if not r.get("site_error")]
    ranked: dict[int, list[int]] = {}
    unranked = [0, 0]
    for row in rows:
        flags = (bool(row["uses_nonce"]), bool(row["reuses_nonce"] and row["uses_nonce"]))
        if row.get("rank") is None:
            slot = unranked
        else:
            slot = ranked.setdefault((row["rank"] - 1) // bucket_size, [0, 0])
        slot[0] += flags[0]
        slot[1] += flags[1]

    buckets = []
    if ranked:
        for index in range(max(ranked) + 1):
            nonce_sites, reusing = ranked.get(index, (0, 0))
            start = index * bucket_size + 1
            buckets.append(Bucket(start, start + bucket_size - 1, nonce_sites, reusing))
    if any(row.get("rank") is None for row in rows):
        buckets.append(Bucket(None, None, unranked[0], unranked[1]))
    return RankHistogram(bucket_size, buckets)


def load_site_rows(out_dir: str | Path) -> list[dict]:
    rows = []
    for path in sorted(Path(out_dir).glob(f"*/{RECORDS_FILE}")):
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    record = json.loads(line)
                    if record.get("type") == "site":
                        rows.append(record)
    return rows


def write_summary(out_dir: str | Path, summary: RunSummary) -> Path:
    path = Path(out_dir) / SUMMARY_FILE
    try:
        path.write_text(summary.to_json(), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def write_histogram(out_dir: str | Path, histogram: RankHistogram) -> Path:
    path = Path(out_dir) / HISTOGRAM_FILE
    try:
        path.write_text(histogram.to_csv(), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path
