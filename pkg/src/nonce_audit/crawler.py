"""Breadth-first discovery of a site's internal pages within a page budget."""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from urllib.parse import urljoin, urlsplit, urlunsplit
from urllib.robotparser import RobotFileParser

from ._html import scan_html
from .csp import PolicySet, extract_policies
from .nonces import page_uses_nonce
from .probe import FetchError, ProbeResponse, Session

log = logging.getLogger(__name__)

_DEFAULT_PORTS = {"http": 80, "https": 443}
_LABEL = re.compile(r"^(?!-)[a-z0-9-]{1,63}(?<!-)$")


@dataclass(frozen=True)
class CrawlBudget:
    max_subdomains: int = 10
    max_pages_per_subdomain: int = 10
    max_depth: int | None = None
    request_timeout: float = 10.0
    min_request_interval: float = 200  # milliseconds

    def __post_init__(self):
        if self.max_subdomains < 1 or self.max_pages_per_subdomain < 1:
            raise ValueError("crawl budget needs at least one subdomain and one page")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    @property
    def max_pages(self) -> int:
        return self.max_subdomains * self.max_pages_per_subdomain


def valid_hostname(name: str) -> bool:
    if not name or len(name) > 253:
        return False
    return all(_LABEL.match(label) for label in name.split("."))


@dataclass(frozen=True)
class SiteTarget:
    registrable_domain: str
    rank: int | None = None

    def __post_init__(self):
        domain = self.registrable_domain.strip().lower().rstrip(".")
        if not valid_hostname(domain):
            raise ValueError(f"not a valid domain name: {self.registrable_domain!r}")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be a positive integer")
        object.__setattr__(self, "registrable_domain", domain)


@dataclass
class PageVisit:
    url: str
    response: ProbeResponse | None = None
    error: str | None = None
    depth: int = 0
    policies: PolicySet | None = None
    csp_found: bool = False
    nonce_found: bool = False


@dataclass
class CrawlResult:
    target: SiteTarget
    pages: list[PageVisit] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)
    site_error: str | None = None
    scheme: str | None = None

    @property
    def nonce_pages(self) -> list[PageVisit]:
        return [p for p in self.pages if p.nonce_found]


def normalize_url(url: str) -> str:
    """Canonical form used for deduplication. Raises ValueError when unusable."""
    parts = urlsplit(url.strip())
    scheme = parts.scheme.lower()
    if scheme not in _DEFAULT_PORTS:
        raise ValueError(f"unsupported scheme in {url!r}")
    host = (parts.hostname or "").rstrip(".")
    if not host:
        raise ValueError(f"no host in {url!r}")
    port = parts.port  # raises ValueError for garbage ports
    netloc = f"[{host}]" if ":" in host else host
    if port is not None and port != _DEFAULT_PORTS[scheme]:
        netloc = f"{netloc}:{port}"
    return urlunsplit((scheme, netloc, parts.path or "/", parts.query, ""))


def host_of(url: str) -> str:
    try:
        return (urlsplit(url).hostname or "").rstrip(".").lower()
    except ValueError:
        return ""


def is_internal(url: str, site: SiteTarget) -> bool:
    host = host_of(url)
    if not host:
        return False
    domain = site.registrable_domain
    return host == domain or host.endswith("." + domain)


def extract_links(html: str, base_url: str) -> list[str]:
    scan = scan_html(html)
    base = base_url
    if scan.base_href:
        try:
            base = urljoin(base_url, scan.base_href.strip())
        except ValueError:
            pass
    links: dict[str, None] = {}
    for href in scan.anchors:
        try:
            links.setdefault(normalize_url(urljoin(base, href.strip())))
        except ValueError:
            continue
    return list(links)


class _Robots:
    def __init__(self, session: Session, enabled: bool):
        self.session = session
        self.enabled = enabled
        self._parsers: dict[str, RobotFileParser | None] = {}

    def allowed(self, url: str) -> bool:
        if not self.enabled:
            return True
        parts = urlsplit(url)
        origin = f"{parts.scheme}://{parts.netloc}"
        if origin not in self._parsers:
            self._parsers[origin] = self._load(origin)
        parser = self._parsers[origin]
        return parser is None or parser.can_fetch(self.session.user_agent, url)

    def _load(self, origin: str) -> RobotFileParser | None:
        try:
            response = self.session.fetch(origin + "/robots.txt")
        except FetchError:
            return None
        if response.status >= 400:
            return None
        parser = RobotFileParser()
        parser.parse(response.body.splitlines())
        return parser


def _inspect(visit: PageVisit) -> list[str]:
    response = visit.response
    scan = scan_html(response.body) if response.is_html else scan_html("")
    visit.policies = extract_policies(response.headers, scan=scan, source_url=response.final_url)
    visit.csp_found = len(visit.policies) > 0
    visit.nonce_found = page_uses_nonce(visit.policies, scan)
    if not response.is_html:
        return []
    return extract_links(response.body, response.final_url)


def _fetch_homepage(target: SiteTarget, session: Session, scheme: str) -> tuple[str, ProbeResponse]:
    schemes = ["https", "http"] if scheme == "auto" else [scheme]
    last: FetchError | None = None
    for candidate in schemes:
        url = f"{candidate}://{target.registrable_domain}/"
        try:
            return url, session.fetch(url)
        except FetchError as exc:
            log.info("homepage %s failed: %s", url, exc)
            last = exc
    assert last is not None
    raise last


def crawl_site(
    target: SiteTarget,
    budget: CrawlBudget,
    session: Session,
    scheme: str = "auto",
    respect_robots: bool = True,
) -> CrawlResult:
    result = CrawlResult(target)
    robots = _Robots(session, respect_robots)
    pages_per_host: dict[str, int] = {}
    seen: set[str] = set()

    def admit(url: str) -> bool:
        host = host_of(url)
        if host not in pages_per_host and len(pages_per_host) >= budget.max_subdomains:
            return False
        return pages_per_host.get(host, 0) < budget.max_pages_per_subdomain

    try:
        home_url, home = _fetch_homepage(target, session, scheme)
    except FetchError as exc:
        result.site_error = exc.kind
        result.errors.append((f"{target.registrable_domain}/", exc.kind))
        return result
    result.scheme = urlsplit(home_url).scheme

    queue: deque[tuple[str, int, ProbeResponse | None]] = deque([(home_url, 0, home)])
    seen.add(home_url)
    while queue:
        url, depth, prefetched = queue.popleft()
        if not admit(url):
            continue
        if prefetched is None and not robots.allowed(url):
            result.errors.append((url, "robots_disallowed"))
            continue

        host = host_of(url)
        pages_per_host[host] = pages_per_host.get(host, 0) + 1
        visit = PageVisit(url, depth=depth)
        result.pages.append(visit)
        try:
            visit.response = prefetched or session.fetch(url)
        except FetchError as exc:
            visit.error = exc.kind
            result.errors.append((url, exc.kind))
            continue

        try:
            final = normalize_url(visit.response.final_url)
        except ValueError:
            final = url
        seen.add(final)
        if not is_internal(final, target):
            visit.error = "external_redirect"
            result.errors.append((url, visit.error))
            continue

        links = _inspect(visit)
        if budget.max_depth is not None and depth >= budget.max_depth:
            continue
        for link in links:
            if link in seen or not is_internal(link, target):
                continue
            seen.add(link)
            queue.append((link, depth + 1, None))
    return result
