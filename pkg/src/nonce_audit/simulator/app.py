"""FastAPI app emulating nonce-issuing origins behind an optional cache.

Every scenario is a virtual host. The app accepts proxy-style requests
(absolute request targets), so a scanner pointed at it as its HTTP proxy
reaches ``http://s2.<scenario>.sim.test/p3`` without any DNS setup.
"""

from __future__ import annotations

import base64
import hashlib
import secrets
import string
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .models import CacheMode, CspDelivery, NonceAlphabet, NonceMode, Scenario, ground_truth

DIAGNOSTICS = "/__simulator__"
SESSION_COOKIE = "sid"
EXTERNAL_LINK = "http://external.example/"
_ALPHABET = string.ascii_letters + string.digits + "-_"


@dataclass
class CacheEntry:
    status: int
    headers: list[tuple[str, str]]
    body: bytes
    stored_at: int


@dataclass
class Page:
    status: int
    headers: list[tuple[str, str]]
    body: bytes
    nonce: str | None = None


@dataclass
class SimulatorState:
    scenarios: dict[str, Scenario]  # virtual host domain -> scenario
    base_domain: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    cache: dict[tuple, CacheEntry] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)
    clock: int = 0  # virtual seconds, one tick per request

    def reset(self) -> None:
        with self.lock:
            self.cache.clear()
            self.log.clear()
            self.clock = 0

    def snapshot(self) -> list[dict]:
        with self.lock:
            return [dict(entry) for entry in self.log]

    def resolve(self, host: str) -> tuple[Scenario, int] | None:
        for domain, scenario in self.scenarios.items():
            if host == domain:
                return scenario, 0
            if host.endswith("." + domain):
                label = host[: -len(domain) - 1]
                if label.startswith("s") and label[1:].isdigit():
                    index = int(label[1:])
                    if 1 <= index < scenario.topology.subdomains and label == f"s{index}":
                        return scenario, index
        return None


def scenario_domain(scenario: Scenario, base_domain: str = "sim.test") -> str:
    return f"{scenario.name}.{base_domain}"


def subdomain_host(domain: str, index: int) -> str:
    return domain if index == 0 else f"s{index}.{domain}"


def page_path(index: int) -> str:
    return "/" if index == 0 else f"/p{index}"


def _page_index(path: str, pages: int) -> int | None:
    if path == "/":
        return 0
    if path.startswith("/p") and path[2:].isdigit():
        index = int(path[2:])
        if 1 <= index < pages and path == f"/p{index}":
            return index
    return None


def _derived(seed: str, length: int) -> str:
    digest = hashlib.sha512(seed.encode()).digest()
    text = base64.urlsafe_b64encode(digest * (1 + length // 64)).decode().rstrip("=")
    return text[:length]


def make_nonce(scenario: Scenario, sid: str) -> str:
    length = scenario.nonce_length
    if scenario.nonce_mode is NonceMode.STATIC:
        value = _derived("static:" + scenario.name, length)
    elif scenario.nonce_mode is NonceMode.SESSION:
        value = _derived(f"session:{scenario.name}:{sid}", length)
    else:
        value = "".join(secrets.choice(_ALPHABET) for _ in range(length))
    if scenario.nonce_alphabet is NonceAlphabet.INVALID:
        middle = length // 2
        value = value[:middle] + "$" + value[middle + 1:]
    return value + "=" * scenario.nonce_padding


def _links(scenario: Scenario, domain: str, sub: int, page: int) -> list[str]:
    host = subdomain_host(domain, sub)
    if page == 0:
        links = [f"http://{host}{page_path(j)}" for j in range(1, scenario.topology.pages)]
        if sub == 0:
            links += [f"http://{subdomain_host(domain, i)}/" for i in range(1, scenario.topology.subdomains)]
            links.append(EXTERNAL_LINK)
        else:
            links.append(f"http://{domain}/")
        return links
    links = [f"http://{host}/"]
    if page + 1 < scenario.topology.pages:
        links.append(f"http://{host}{page_path(page + 1)}")
    return links


def render_origin(scenario: Scenario, domain: str, sub: int, page: int, sid: str) -> Page:
    nonce = make_nonce(scenario, sid)
    policy = f"script-src 'nonce-{nonce}' 'strict-dynamic'; style-src 'self' 'nonce-{nonce}'; object-src 'none'; base-uri 'none'"
    delivery = scenario.csp_delivery
    headers = [("content-type", "text/html; charset=utf-8")]
    if delivery in (CspDelivery.HEADER, CspDelivery.BOTH):
        headers.append(("content-security-policy", policy))
    elif delivery is CspDelivery.REPORT_ONLY_HEADER:
        headers.append(("content-security-policy-report-only", policy))
    if scenario.nonce_mode is NonceMode.FRESH or scenario.no_store:
        headers.append(("cache-control", "no-store"))
    else:
        headers.append(("cache-control", "public, max-age=3600"))

    meta = ""
    if delivery in (CspDelivery.META, CspDelivery.BOTH):
        meta = f'<meta http-equiv="Content-Security-Policy" content="{policy}">'
    elif delivery is CspDelivery.REPORT_ONLY_META:
        meta = f'<meta http-equiv="Content-Security-Policy-Report-Only" content="{policy}">'
    anchors = "\n".join(f'<li><a href="{href}">{href}</a></li>' for href in _links(scenario, domain, sub, page))
    body = f"""<!doctype html>
<html>
<head>
<title>{scenario.name} s{sub} p{page}</title>
{meta}
<style nonce="{nonce}">body {{ font-family: sans-serif; }}</style>
</head>
<body>
<h1>{scenario.name}: subdomain {sub}, page {page}</h1>
<ul>
{anchors}
</ul>
<script nonce="{nonce}">console.log("page {page}");</script>
<script nonce="{nonce}">window.loaded = true;</script>
</body>
</html>
"""
    return Page(200, headers, body.encode("utf-8"), nonce)


def _text(status: int, message: str) -> Response:
    return Response(message + "\n", status_code=status, media_type="text/plain")


def create_app(scenarios: list[Scenario], base_domain: str = "sim.test") -> FastAPI:
    state = SimulatorState({scenario_domain(s, base_domain): s for s in scenarios}, base_domain)
    app = FastAPI(title="nonce-audit target simulator")
    app.state.sim = state

    @app.get(DIAGNOSTICS + "/requests")
    def request_log():
        return state.snapshot()

    @app.post(DIAGNOSTICS + "/reset")
    def reset():
        state.reset()
        return {"ok": True}

    @app.get(DIAGNOSTICS + "/scenarios")
    def scenario_list():
        return [
            {
                "domain": domain,
                "scenario": s.model_dump(mode="json", exclude={"expected"}),
                "ground_truth": ground_truth(s).model_dump(mode="json"),
            }
            for domain, s in state.scenarios.items()
        ]

    @app.api_route("/{path:path}", methods=["GET", "HEAD"])
    def serve(request: Request, path: str):
        host = (request.url.hostname or "").lower().rstrip(".")
        query = request.url.query
        sid = request.cookies.get(SESSION_COOKIE)
        with state.lock:
            state.clock += 1
            entry = {
                "seq": len(state.log) + 1,
                "method": request.method,
                "url": str(request.url),
                "host": host,
                "path": request.url.path,
                "query": query,
                "cookie_present": "cookie" in request.headers,
                "cookie": request.headers.get("cookie"),
                "scenario": None,
                "cache": None,
                "origin": False,
                "nonce": None,
                "status": 404,
            }
            state.log.append(entry)
            response = _dispatch(state, entry, host, request.url.path, query, sid)
            entry["status"] = response.status_code
        return response

    return app


def _dispatch(state: SimulatorState, entry: dict, host: str, path: str, query: str, sid: str | None) -> Response:
    resolved = state.resolve(host)
    if resolved is None:
        return _text(404, f"unknown virtual host {host}")
    scenario, sub = resolved
    entry["scenario"] = scenario.name
    page = _page_index(path, scenario.topology.pages)
    if page is None:
        return _text(404, "not found")

    domain = scenario_domain(scenario, state.base_domain)
    new_sid = None
    if not sid:
        sid = new_sid = secrets.token_hex(8)

    def origin() -> Page:
        entry["origin"] = True
        rendered = render_origin(scenario, domain, sub, page, sid)
        if new_sid:
            rendered.headers.append(("set-cookie", f"{SESSION_COOKIE}={new_sid}; Path=/; HttpOnly"))
        return rendered

    label = scenario.status_header
    if scenario.cache is CacheMode.NONE:
        result = origin()
    elif not scenario.cache_stores:
        result = origin()
        entry["cache"] = "MISS"
        if label:
            result.headers.append((label.name, label.miss))
    else:
        key = (host, path, query if scenario.cache is CacheMode.QUERY_IN_KEY else "")
        stored = state.cache.get(key)
        if stored is not None:
            entry["cache"] = "HIT"
            headers = list(stored.headers)
            if label:
                headers.append((label.name, label.hit))
            if scenario.emit_age:
                headers.append(("age", str(state.clock - stored.stored_at)))
            result = Page(stored.status, headers, stored.body)
        else:
            entry["cache"] = "MISS"
            result = origin()
            kept = [(k, v) for k, v in result.headers if k != "set-cookie"]
            state.cache[key] = CacheEntry(result.status, kept, result.body, state.clock)
            if label:
                result.headers.append((label.name, label.miss))

    entry["nonce"] = result.nonce if result.nonce is not None else _nonce_of(result.body)
    entry["body_sha256"] = hashlib.sha256(result.body).hexdigest()
    response = Response(result.body, status_code=result.status)
    response.raw_headers = [(k.encode("latin-1"), v.encode("latin-1")) for k, v in result.headers]
    response.raw_headers.append((b"content-length", str(len(result.body)).encode()))
    return response


def _nonce_of(body: bytes) -> str | None:
    marker = b'<script nonce="'
    start = body.find(marker)
    if start < 0:
        return None
    start += len(marker)
    return body[start: body.find(b'"', start)].decode()
