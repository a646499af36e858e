"""HTTP sessions and the per-page probe: baseline, repeat, cache-busted, cookie-free."""

from __future__ import annotations

import hashlib
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from urllib.parse import urlsplit, urlunsplit

import requests

from ._html import scan_html
from .csp import extract_policies
from .nonces import NonceObservation, extract_dom_nonces, extract_policy_nonces, script_values

log = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "nonce-audit/0.1 (+CSP nonce auditing scanner)"
MAX_REDIRECTS = 10

BASELINE, REPEAT, CACHE_BUSTED, COOKIE_FREE = 1, 2, 3, 4
PROBE_LABELS = {BASELINE: "baseline", REPEAT: "reuse-check", CACHE_BUSTED: "cache-busted", COOKIE_FREE: "cookie-free"}


class FetchError(Exception):
    """A request that produced no HTTP response."""

    def __init__(self, kind: str, url: str, detail: str = ""):
        super().__init__(f"{kind}: {url} {detail}".strip())
        self.kind = kind
        self.url = url
        self.detail = detail


@dataclass(frozen=True)
class ProbeResponse:
    url: str
    final_url: str
    status: int
    reason: str
    headers: tuple[tuple[str, str], ...]
    body: str
    fetched_at: str
    cookie_jar_state: str
    request_headers: tuple[tuple[str, str], ...] = ()
    redirects: tuple[str, ...] = ()

    def header_values(self, name: str) -> list[str]:
        name = name.lower()
        return [v for k, v in self.headers if k.lower() == name]

    @property
    def sent_cookie(self) -> bool:
        return any(k.lower() == "cookie" for k, _ in self.request_headers)

    @property
    def is_html(self) -> bool:
        ctype = ";".join(self.header_values("content-type")).lower()
        return not ctype or "html" in ctype

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "final_url": self.final_url,
            "status": self.status,
            "reason": self.reason,
            "headers": [list(h) for h in self.headers],
            "request_headers": [list(h) for h in self.request_headers],
            "redirects": list(self.redirects),
            "fetched_at": self.fetched_at,
            "cookie_jar_state": self.cookie_jar_state,
            "body_sha256": hashlib.sha256(self.body.encode("utf-8")).hexdigest(),
        }


def _wire_headers(resp: requests.Response) -> tuple[tuple[str, str], ...]:
    # http.client keeps the received order and repeated fields; requests' own
    # mapping folds duplicates with ", ", which corrupts multiple CSP headers
    original = getattr(resp.raw, "_original_response", None)
    if original is not None and getattr(original, "msg", None) is not None:
        return tuple((k, v) for k, v in original.msg.items())
    raw = getattr(resp.raw, "headers", None)
    if raw is not None:
        return tuple(raw.items())
    return tuple(resp.headers.items())


def _decode(resp: requests.Response) -> str:
    encoding = resp.encoding or "utf-8"
    try:
        return resp.content.decode(encoding, errors="replace")
    except LookupError:
        return resp.content.decode("utf-8", errors="replace")


def _jar_state(jar) -> str:
    items = sorted((c.domain, c.path, c.name, c.value or "") for c in jar)
    if not items:
        return "empty"
    return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


class Session:
    """Cookie-persistent HTTP session for one site.

    Requests are serialized and spaced at least ``min_interval_ms`` apart.
    ``fetch(use_cookies=False)`` goes through a throwaway jar so the site
    session is neither sent nor modified.
    """

    def __init__(
        self,
        user_agent: str = DEFAULT_USER_AGENT,
        timeout: float = 10.0,
        min_interval_ms: float = 200,
        probe_delay_ms: float = 0,
        proxy: str | None = None,
        verify: bool = True,
    ):
        self.user_agent = user_agent
        self.timeout = timeout
        self.min_interval = min_interval_ms / 1000.0
        self.probe_delay = probe_delay_ms / 1000.0
        self.proxy = proxy
        self.verify = verify
        self._http = self._new_client()
        self._lock = threading.Lock()
        self._last_request = 0.0

    def _new_client(self) -> requests.Session:
        client = requests.Session()
        client.max_redirects = MAX_REDIRECTS
        client.headers["User-Agent"] = self.user_agent
        client.verify = self.verify
        if self.proxy:
            client.proxies = {"http": self.proxy, "https": self.proxy}
        return client

    @property
    def cookies(self):
        return self._http.cookies

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _pace(self) -> None:
        wait = self._last_request + self.min_interval - time.monotonic()
        if wait > 0:
            time.sleep(wait)

    def fetch(self, url: str, use_cookies: bool = True) -> ProbeResponse:
        with self._lock:
            self._pace()
            client = self._http if use_cookies else self._new_client()
            try:
                resp = client.get(url, timeout=self.timeout, allow_redirects=True)
            except requests.exceptions.SSLError as exc:
                raise FetchError("tls", url, str(exc)) from exc
            except requests.exceptions.ProxyError as exc:
                raise FetchError("proxy", url, str(exc)) from exc
            except requests.exceptions.Timeout as exc:
                raise FetchError("timeout", url, str(exc)) from exc
            except requests.exceptions.TooManyRedirects as exc:
                raise FetchError("too_many_redirects", url, str(exc)) from exc
            except requests.exceptions.ConnectionError as exc:
                raise FetchError("connection", url, str(exc)) from exc
            except (requests.exceptions.InvalidURL, requests.exceptions.MissingSchema,
                    requests.exceptions.InvalidSchema) as exc:
                raise FetchError("invalid_url", url, str(exc)) from exc
            except requests.exceptions.RequestException as exc:
                raise FetchError("request", url, str(exc)) from exc
            finally:
                self._last_request = time.monotonic()
                if not use_cookies:
                    client.close()

            return ProbeResponse(
                url=url,
                final_url=resp.url,
                status=resp.status_code,
                reason=resp.reason or "",
                headers=_wire_headers(resp),
                body=_decode(resp),
                fetched_at=datetime.now(timezone.utc).isoformat(),
                cookie_jar_state=_jar_state(client.cookies) if use_cookies else "empty",
                request_headers=tuple(resp.request.headers.items()),
                redirects=tuple(r.url for r in resp.history),
            )


def add_cache_buster(url: str) -> str:
    name = "cb" + secrets.token_hex(4)
    value = secrets.token_hex(8)
    sep = "&" if urlsplit(url).query else "?"
    return f"{url}{sep}{name}={value}"


def strip_cache_buster(url: str) -> str:
    """Inverse of :func:`add_cache_buster`."""
    parts = urlsplit(url)
    head, sep, last = parts.query.rpartition("&")
    if not last.startswith("cb"):
        raise ValueError(f"no cache-busting parameter in {url!r}")
    return urlunsplit(parts._replace(query=head if sep else ""))


@dataclass
class PageProbe:
    url: str
    responses: dict[int, ProbeResponse] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)
    nonces: dict[int, list[NonceObservation]] = field(default_factory=dict)
    cache_buster_url: str | None = None

    @property
    def r1(self) -> ProbeResponse | None:
        return self.responses.get(BASELINE)

    @property
    def r2(self) -> ProbeResponse | None:
        return self.responses.get(REPEAT)

    @property
    def r3(self) -> ProbeResponse | None:
        return self.responses.get(CACHE_BUSTED)

    @property
    def r4(self) -> ProbeResponse | None:
        return self.responses.get(COOKIE_FREE)

    def ok(self, index: int) -> bool:
        return index in self.responses and index not in self.errors

    def script_nonces(self, index: int) -> list[str]:
        return script_values(self.nonces.get(index, []))


def observe(response: ProbeResponse, page_url: str, index: int) -> list[NonceObservation]:
    scan = scan_html(response.body)
    policies = extract_policies(response.headers, scan=scan, source_url=response.final_url)
    return extract_policy_nonces(policies, page_url, index) + extract_dom_nonces(scan, page_url, index)


def repeated_script_nonces(probe: PageProbe) -> list[str]:
    """Script nonce values present in both the baseline and the repeat response."""
    second = set(probe.script_nonces(REPEAT))
    return [v for v in probe.script_nonces(BASELINE) if v in second]


def run_probe_sequence(url: str, session: Session) -> PageProbe:
    probe = PageProbe(url)

    def step(index: int, target: str, use_cookies: bool = True) -> bool:
        if index > BASELINE and session.probe_delay:
            time.sleep(session.probe_delay)
        try:
            response = session.fetch(target, use_cookies=use_cookies)
        except FetchError as exc:
            probe.errors[index] = exc.kind
            log.info("probe %s aborted at %s: %s", url, PROBE_LABELS[index], exc)
            return False
        probe.responses[index] = response
        probe.nonces[index] = observe(response, url, index)
        if response.status >= 400:
            probe.errors[index] = f"http_{response.status}"
            return False
        return True

    if not step(BASELINE, url) or not step(REPEAT, url):
        return probe
    if not repeated_script_nonces(probe):
        return probe
    probe.cache_buster_url = add_cache_buster(url)
    if step(CACHE_BUSTED, probe.cache_buster_url):
        step(COOKIE_FREE, url, use_cookies=False)
    return probe
