"""Turn probe results into reuse, cause and session-scope findings."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .cache_heuristics import CacheStatus, CacheVerdict, classify_response
from .crawler import SiteTarget
from .csp import Policy
from .nonces import LengthVerdict, ValidityVerdict, check_length, check_validity
from .probe import BASELINE, CACHE_BUSTED, COOKIE_FREE, REPEAT, PageProbe, repeated_script_nonces


class Cause(str, enum.Enum):
    CACHE = "Cache"
    SERVER_SIDE = "ServerSide"


class Confidence(str, enum.Enum):
    CONCLUSIVE = "Conclusive"
    PROBABLE = "Probable"


class Scope(str, enum.Enum):
    SAME_SESSION_ONLY = "SameSessionOnly"
    CROSS_SESSION = "CrossSession"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class CauseSignals:
    static_sitewide: bool
    cb_nonce_changed: bool | None
    chh_r2: CacheVerdict
    chh_r3: CacheVerdict | None

    def to_dict(self) -> dict:
        return {
            "static_sitewide": self.static_sitewide,
            "cb_nonce_changed": self.cb_nonce_changed,
            "chh_r2": self.chh_r2.to_dict(),
            "chh_r3": self.chh_r3.to_dict() if self.chh_r3 else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CauseSignals":
        return cls(
            data["static_sitewide"],
            data["cb_nonce_changed"],
            CacheVerdict.from_dict(data["chh_r2"]),
            CacheVerdict.from_dict(data["chh_r3"]) if data.get("chh_r3") else None,
        )


@dataclass(frozen=True)
class ReuseCause:
    cause: Cause
    confidence: Confidence
    signals: CauseSignals
    rule: int
    cached_nonce_observed: bool

    def to_dict(self) -> dict:
        return {
            "cause": self.cause.value,
            "confidence": self.confidence.value,
            "rule": self.rule,
            "cached_nonce_observed": self.cached_nonce_observed,
            "signals": self.signals.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReuseCause":
        return cls(
            Cause(data["cause"]),
            Confidence(data["confidence"]),
            CauseSignals.from_dict(data["signals"]),
            data["rule"],
            data["cached_nonce_observed"],
        )


@dataclass(frozen=True)
class SessionScope:
    scope: Scope
    r1_values: tuple[str, ...]
    r4_values: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"scope": self.scope.value, "r1": list(self.r1_values), "r4": list(self.r4_values)}


# page url -> nonce values seen on that page within the site session
SiteContext = Mapping[str, set[str]]


def detect_reuse(probe: PageProbe) -> bool | None:
    """True/False for a completed repeat; None when r1 or r2 failed."""
    if not (probe.ok(BASELINE) and probe.ok(REPEAT)):
        return None
    return bool(repeated_script_nonces(probe))


def site_context(probes: Iterable[PageProbe]) -> dict[str, set[str]]:
    """Script nonce values per page from the cookie-carrying baseline and repeat."""
    context: dict[str, set[str]] = {}
    for probe in probes:
        values = set(probe.script_nonces(BASELINE)) | set(probe.script_nonces(REPEAT))
        if values:
            context.setdefault(probe.url, set()).update(values)
    return context


def _static_sitewide(values: Iterable[str], page_url: str, context: SiteContext) -> bool:
    for value in values:
        pages = {url for url, seen in context.items() if value in seen}
        pages.add(page_url)
        if len(pages) >= 2:
            return True
    return False


def classify_cause(probe: PageProbe, context: SiteContext) -> ReuseCause:
    reused = repeated_script_nonces(probe)
    if not reused:
        raise ValueError(f"no repeated nonce on {probe.url}")

    chh_r2 = classify_response(probe.r2.headers)
    chh_r3 = cb_changed = None
    if probe.ok(CACHE_BUSTED):
        chh_r3 = classify_response(probe.r3.headers)
        r3_values = probe.script_nonces(CACHE_BUSTED)
        if r3_values:
            cb_changed = not any(v in r3_values for v in reused)
    static = _static_sitewide(reused, probe.url, context)
    signals = CauseSignals(static, cb_changed, chh_r2, chh_r3)
    cached = cb_changed is True or chh_r2.status is CacheStatus.HIT

    def verdict(cause: Cause, confidence: Confidence, rule: int) -> ReuseCause:
        return ReuseCause(cause, confidence, signals, rule, cached)

    if chh_r2.status is CacheStatus.MISS:
        return verdict(Cause.SERVER_SIDE, Confidence.CONCLUSIVE, 1)
    if cb_changed is True:
        return verdict(Cause.CACHE, Confidence.CONCLUSIVE, 2)
    if cb_changed is False and chh_r3 is not None and chh_r3.status is CacheStatus.MISS:
        return verdict(Cause.SERVER_SIDE, Confidence.CONCLUSIVE, 3)
    if static:
        return verdict(Cause.SERVER_SIDE, Confidence.CONCLUSIVE, 4)
    return verdict(Cause.SERVER_SIDE, Confidence.PROBABLE, 5)


def classify_session_scope(probe: PageProbe) -> SessionScope:
    reused = tuple(repeated_script_nonces(probe))
    if not probe.ok(COOKIE_FREE):
        return SessionScope(Scope.UNKNOWN, reused, ())
    r4 = tuple(probe.script_nonces(COOKIE_FREE))
    scope = Scope.CROSS_SESSION if any(v in r4 for v in reused) else Scope.SAME_SESSION_ONLY
    return SessionScope(scope, reused, r4)


@dataclass
class PageResult:
    url: str
    enforcement: bool = False
    report_only: bool = False
    uses_nonce: bool = False
    findings: list[str] = field(default_factory=list)
    policies: list[Policy] = field(default_factory=list)
    crawl_error: str | None = None
    probe: PageProbe | None = None
    reuse: bool | None = None
    cause: ReuseCause | None = None
    session_scope: SessionScope | None = None
    lengths: dict[str, LengthVerdict] = field(default_factory=dict)
    validity: dict[str, ValidityVerdict] = field(default_factory=dict)

    @property
    def uses_csp(self) -> bool:
        return self.enforcement or self.report_only

    @property
    def short_nonce(self) -> bool:
        return any(v.is_short for v in self.lengths.values())

    @property
    def invalid_nonce(self) -> bool:
        return any(not v.is_valid for v in self.validity.values())


def judge_nonces(page: PageResult) -> None:
    """Length and alphabet checks on every nonce of the baseline response."""
    if page.probe is None:
        return
    for obs in page.probe.nonces.get(BASELINE, []):
        if obs.value not in page.lengths:
            page.lengths[obs.value] = check_length(obs.value)
            page.validity[obs.value] = check_validity(obs.value)


def classify_pages(pages: list[PageResult]) -> None:
    probes = [p.probe for p in pages if p.probe is not None]
    context = site_context(probes)
    for page in pages:
        if page.probe is None:
            continue
        judge_nonces(page)
        page.reuse = detect_reuse(page.probe)
        if page.reuse:
            page.cause = classify_cause(page.probe, context)
            page.session_scope = classify_session_scope(page.probe)


@dataclass
class SiteReport:
    target: SiteTarget
    uses_csp: bool = False
    enforcement_seen: bool = False
    report_only_seen: bool = False
    uses_nonce: bool = False
    reuses_nonce: bool = False
    cause: ReuseCause | None = None
    cached_nonce_observed: bool = False
    session_scope: Scope | None = None
    short_nonce: bool = False
    length8_nonce: bool = False
    invalid_nonce: bool = False
    pages: list[PageResult] = field(default_factory=list)
    site_error: str | None = None

    def summary_fields(self) -> dict:
        """The flat flags reporting aggregates over; stable field names."""
        return {
            "domain": self.target.registrable_domain,
            "rank": self.target.rank,
            "site_error": self.site_error,
            "uses_csp": self.uses_csp,
            "enforcement_seen": self.enforcement_seen,
            "report_only_seen": self.report_only_seen,
            "uses_nonce": self.uses_nonce,
            "reuses_nonce": self.reuses_nonce,
            "cause": self.cause.cause.value if self.cause else None,
            "cause_confidence": self.cause.confidence.value if self.cause else None,
            "cached_nonce_observed": self.cached_nonce_observed,
            "session_scope": self.session_scope.value if self.session_scope else None,
            "short_nonce": self.short_nonce,
            "length8_nonce": self.length8_nonce,
            "invalid_nonce": self.invalid_nonce,
        }


def aggregate_site(pages: list[PageResult], target: SiteTarget, site_error: str | None = None) -> SiteReport:
    report = SiteReport(target, pages=pages, site_error=site_error)
    report.enforcement_seen = any(p.enforcement for p in pages)
    report.report_only_seen = any(p.report_only for p in pages)
    report.uses_csp = report.enforcement_seen or report.report_only_seen
    nonce_pages = [p for p in pages if p.uses_nonce]
    report.uses_nonce = bool(nonce_pages)
    report.short_nonce = any(p.short_nonce for p in nonce_pages)
    report.length8_nonce = any(v.useful_chars == 8 for p in nonce_pages for v in p.lengths.values())
    report.invalid_nonce = any(p.invalid_nonce for p in nonce_pages)

    reusing = [p for p in nonce_pages if p.reuse]
    report.reuses_nonce = bool(reusing)
    if not reusing:
        return report

    report.cached_nonce_observed = any(p.cause.cached_nonce_observed for p in reusing)
    causes = [p.cause for p in reusing]
    if all(c.cause is Cause.CACHE for c in causes):
        report.cause = causes[0]
    else:
        server = [c for c in causes if c.cause is Cause.SERVER_SIDE]
        conclusive = [c for c in server if c.confidence is Confidence.CONCLUSIVE]
        report.cause = (conclusive or server)[0]

    scopes = {p.session_scope.scope for p in reusing if p.session_scope}
    if Scope.CROSS_SESSION in scopes:
        report.session_scope = Scope.CROSS_SESSION
    elif Scope.SAME_SESSION_ONLY in scopes:
        report.session_scope = Scope.SAME_SESSION_ONLY
    else:
        report.session_scope = Scope.UNKNOWN
    return report
