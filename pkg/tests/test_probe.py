import re
import socket
from urllib.parse import parse_qsl, urlsplit

import pytest
import requests
from hypothesis import given, strategies as st

from nonce_audit.probe import (
    FetchError,
    PageProbe,
    ProbeResponse,
    Session,
    add_cache_buster,
    run_probe_sequence,
    strip_cache_buster,
)

_CB = re.compile(r"cb[0-9a-f]{8}=[0-9a-f]{16}$")


def test_cache_buster_without_query():
    busted = add_cache_buster("https://s.ex/p")
    assert busted.startswith("https://s.ex/p?cb")
    assert _CB.search(busted)


def test_cache_buster_with_query():
    busted = add_cache_buster("https://s.ex/p?x=1")
    assert busted.startswith("https://s.ex/p?x=1&cb")
    assert _CB.search(busted)


def test_cache_buster_random():
    assert add_cache_buster("https://s.ex/p") != add_cache_buster("https://s.ex/p")


@given(st.from_regex(r"https://[a-z]{1,8}\.ex/[a-z/]{0,10}(\?[a-z0-9=&]{1,12})?", fullmatch=True))
def test_cache_buster_adds_exactly_one_parameter(url):
    busted = add_cache_buster(url)
    assert strip_cache_buster(busted) == url
    before = parse_qsl(urlsplit(url).query, keep_blank_values=True)
    after = parse_qsl(urlsplit(busted).query, keep_blank_values=True)
    assert after[:-1] == before and len(after) == len(before) + 1


def test_strip_requires_buster():
    with pytest.raises(ValueError):
        strip_cache_buster("https://s.ex/p?x=1")


def _sim_session(simulator):
    return Session(min_interval_ms=0, proxy=simulator.proxy_url)


def test_cookie_replayed(simulator):
    url = f"http://{simulator.domain('fresh-nocache')}/"
    with _sim_session(simulator) as session:
        first = session.fetch(url)
        second = session.fetch(url)
    assert any(k.lower() == "set-cookie" and v.startswith("sid=") for k, v in first.headers)
    assert not first.sent_cookie
    sid = dict(session.cookies)["sid"]
    assert dict(second.request_headers)["Cookie"] == f"sid={sid}"
    assert first.cookie_jar_state == second.cookie_jar_state != "empty"


def test_cookie_free_fetch(simulator):
    url = f"http://{simulator.domain('fresh-nocache')}/"
    with _sim_session(simulator) as session:
        session.fetch(url)
        jar_before = dict(session.cookies)
        before = len(simulator.requests())
        response = session.fetch(url, use_cookies=False)
        assert dict(session.cookies) == jar_before
    assert not response.sent_cookie
    assert response.cookie_jar_state == "empty"
    assert simulator.requests()[before]["cookie_present"] is False


def _closed_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_unreachable_port():
    with Session(min_interval_ms=0, timeout=2) as session:
        with pytest.raises(FetchError) as info:
            session.fetch(f"http://127.0.0.1:{_closed_port()}/")
    assert info.value.kind == "connection"


def test_headers_keep_wire_order_and_duplicates(simulator):
    url = f"http://{simulator.domain('fresh-nocache')}/"
    with _sim_session(simulator) as session:
        response = session.fetch(url)
    names = [k.lower() for k, _ in response.headers]
    assert names.index("content-type") < names.index("content-security-policy") < names.index("cache-control")


def test_min_interval_spacing(simulator):
    import time

    url = f"http://{simulator.domain('linkless')}/"
    with Session(min_interval_ms=150, proxy=simulator.proxy_url) as session:
        start = time.monotonic()
        for _ in range(3):
            session.fetch(url)
    assert time.monotonic() - start >= 0.3


class StubSession:
    """Replays canned responses; records what was asked for."""

    probe_delay = 0

    def __init__(self, bodies, statuses=None, fail_at=None):
        self.bodies = list(bodies)
        self.statuses = list(statuses or [200] * len(self.bodies))
        self.fail_at = fail_at
        self.calls = []

    def fetch(self, url, use_cookies=True):
        self.calls.append((url, use_cookies))
        n = len(self.calls)
        if n == self.fail_at:
            raise FetchError("timeout", url)
        return ProbeResponse(url, url, self.statuses[n - 1], "", (("content-type", "text/html"),
                             ("content-security-policy", "script-src 'nonce-x'")), self.bodies[n - 1], "t", "j")


def _page(nonce):
    return f'<script nonce="{nonce}">a()</script>'


def test_no_reuse_stops_after_two():
    stub = StubSession([_page("a" * 22), _page("b" * 22)])
    probe = run_probe_sequence("http://s.ex/", stub)
    assert [i for i in probe.responses] == [1, 2]
    assert probe.r3 is None and probe.r4 is None


def test_reuse_triggers_busted_and_cookie_free():
    stub = StubSession([_page("a" * 22)] * 4)
    probe = run_probe_sequence("http://s.ex/p?x=1", stub)
    assert [c[1] for c in stub.calls] == [True, True, True, False]
    assert stub.calls[2][0] == probe.cache_buster_url
    assert strip_cache_buster(probe.cache_buster_url) == "http://s.ex/p?x=1"
    assert stub.calls[3][0] == "http://s.ex/p?x=1"
    assert {o.location.value for o in probe.nonces[1]} == {"policy", "script"}


def test_r2_server_error_aborts():
    stub = StubSession([_page("a" * 22)] * 4, statuses=[200, 500, 200, 200])
    probe = run_probe_sequence("http://s.ex/", stub)
    assert probe.errors == {2: "http_500"}
    assert len(stub.calls) == 2 and probe.r3 is None and probe.r4 is None


def test_r3_fetch_error_keeps_partial_probe():
    stub = StubSession([_page("a" * 22)] * 4, fail_at=3)
    probe = run_probe_sequence("http://s.ex/", stub)
    assert probe.errors == {3: "timeout"}
    assert set(probe.responses) == {1, 2} and len(stub.calls) == 3


def test_probe_against_simulator_request_order(simulator):
    url = f"http://{simulator.domain('static-nocache')}/p1"
    with _sim_session(simulator) as session:
        session.fetch(url)  # crawl visit establishes the session
        before = len(simulator.requests())
        probe = run_probe_sequence(url, session)
    log = simulator.requests()[before:]
    assert [e["url"] for e in log] == [url, url, probe.cache_buster_url, url]
    assert [e["cookie_present"] for e in log] == [True, True, True, False]
    assert isinstance(probe, PageProbe) and probe.r4 is not None
