import json
import re

import pytest
from fastapi.testclient import TestClient
from hypothesis import HealthCheck, given, settings, strategies as st
from pydantic import ValidationError

from nonce_audit.simulator import (
    CacheMode,
    CacheStatusHeader,
    CspDelivery,
    NonceMode,
    Scenario,
    SimulatorServer,
    Topology,
    create_app,
    ground_truth,
    load_scenarios,
)

_NONCE = re.compile(r'<script nonce="([^"]+)"')


def client_for(*scenarios):
    return TestClient(create_app(list(scenarios)))


def nonce_of(response):
    return _NONCE.search(response.text).group(1)


def get(client, host, path="/", **kw):
    return client.get(f"http://{host}{path}", **kw)


def test_fresh_nonce_changes():
    client = client_for(Scenario(name="f"))
    first, second = get(client, "f.sim.test"), get(client, "f.sim.test")
    assert nonce_of(first) != nonce_of(second)
    assert len(nonce_of(first)) == 22
    assert f"'nonce-{nonce_of(first)}'" in first.headers["content-security-policy"]
    assert first.headers["cache-control"] == "no-store"


def test_static_nonce_everywhere():
    client = client_for(Scenario(name="s", nonce_mode=NonceMode.STATIC, topology=Topology(subdomains=2, pages=2)))
    values = {nonce_of(get(client, h, p)) for h in ("s.sim.test", "s1.s.sim.test") for p in ("/", "/p1")}
    assert len(values) == 1


def test_session_nonce_follows_cookie():
    app = create_app([Scenario(name="b", nonce_mode=NonceMode.SESSION)])
    one, two = TestClient(app), TestClient(app)
    a1, a2 = get(one, "b.sim.test"), get(one, "b.sim.test")
    b1 = get(two, "b.sim.test")
    assert "sid=" in a1.headers["set-cookie"]
    assert nonce_of(a1) == nonce_of(a2) != nonce_of(b1)


def test_cache_hit_and_miss_labels():
    client = client_for(Scenario(name="c", nonce_mode=NonceMode.FRESH_CACHED, cache=CacheMode.QUERY_IN_KEY))
    miss, hit = get(client, "c.sim.test"), get(client, "c.sim.test")
    busted = get(client, "c.sim.test", "/?cb=1")
    assert (miss.headers["x-cache"], hit.headers["x-cache"], busted.headers["x-cache"]) == ("MISS", "HIT", "MISS")
    assert hit.content == miss.content and nonce_of(busted) != nonce_of(hit)
    assert "set-cookie" not in hit.headers


def test_query_ignored_cache_serves_stored_copy():
    client = client_for(Scenario(name="c", nonce_mode=NonceMode.FRESH_CACHED, cache=CacheMode.QUERY_IGNORED))
    first = get(client, "c.sim.test")
    assert get(client, "c.sim.test", "/?cb=1").content == first.content


def test_age_header_counts_virtual_seconds():
    client = client_for(Scenario(name="a", nonce_mode=NonceMode.STATIC, cache=CacheMode.QUERY_IN_KEY,
                                 cache_status_header=None, emit_age=True))
    assert "age" not in get(client, "a.sim.test").headers
    get(client, "a.sim.test", "/p1")
    assert get(client, "a.sim.test").headers["age"] == "2"


def test_report_only_and_meta_delivery():
    client = client_for(Scenario(name="r", csp_delivery=CspDelivery.REPORT_ONLY_HEADER),
                        Scenario(name="m", csp_delivery=CspDelivery.META))
    r = get(client, "r.sim.test")
    assert "content-security-policy" not in r.headers and "content-security-policy-report-only" in r.headers
    m = get(client, "m.sim.test")
    assert "content-security-policy" not in m.headers and 'http-equiv="Content-Security-Policy"' in m.text


def test_invalid_and_padded_nonces():
    client = client_for(Scenario(name="i", nonce_alphabet="WithInvalidChar"),
                        Scenario(name="p", nonce_length=20, nonce_padding=2))
    assert "$" in nonce_of(get(client, "i.sim.test"))
    padded = nonce_of(get(client, "p.sim.test"))
    assert len(padded) == 22 and padded.endswith("==")


@pytest.mark.parametrize("host, path", [("nope.sim.test", "/"), ("s.sim.test", "/p9"), ("s5.s.sim.test", "/"),
                                        ("s.sim.test", "/p01"), ("s01.s.sim.test", "/")])
def test_unknown_targets_404(host, path):
    client = client_for(Scenario(name="s", topology=Topology(subdomains=2, pages=3)))
    assert get(client, host, path).status_code == 404


def test_diagnostics():
    client = client_for(Scenario(name="s"))
    get(client, "s.sim.test")
    (entry,) = client.get("/__simulator__/requests").json()
    assert entry["scenario"] == "s" and entry["origin"] and entry["cookie_present"] is False
    listed = client.get("/__simulator__/scenarios").json()
    assert listed[0]["domain"] == "s.sim.test" and listed[0]["ground_truth"]["reuse"] is False
    client.post("/__simulator__/reset")
    assert client.get("/__simulator__/requests").json() == []


_requests = st.lists(st.tuples(st.sampled_from(["/", "/p1", "/p2"]), st.sampled_from(["", "?a=1", "?b=2"])),
                     min_size=1, max_size=15)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(_requests, st.sampled_from([CacheMode.QUERY_IN_KEY, CacheMode.QUERY_IGNORED]))
def test_cache_consistency(sequence, mode):
    app = create_app([Scenario(name="c", nonce_mode=NonceMode.FRESH_CACHED, cache=mode)])
    client = TestClient(app)
    bodies = {}
    for path, query in sequence:
        resp = client.get(f"http://c.sim.test{path}{query}")
        key = (path, query if mode is CacheMode.QUERY_IN_KEY else "")
        if key in bodies:
            assert resp.content == bodies[key] and resp.headers["x-cache"] == "HIT"
        else:
            assert resp.headers["x-cache"] == "MISS"
            bodies[key] = resp.content
    log = app.state.sim.snapshot()
    assert len(log) == len(sequence)
    assert all(e["origin"] != (e["cache"] == "HIT") for e in log)
    assert [e["seq"] for e in log] == list(range(1, len(sequence) + 1))


class TestGroundTruth:
    def test_fresh_no_reuse(self):
        truth = ground_truth(Scenario(name="x"))
        assert truth.uses_nonce and not truth.reuse and truth.cause is None

    def test_cached_is_decisive_with_query_key(self):
        truth = ground_truth(Scenario(name="x", nonce_mode=NonceMode.FRESH_CACHED, cache=CacheMode.QUERY_IN_KEY))
        assert (truth.cause, truth.confidence, truth.cached_observed, truth.session_scope) == (
            "Cache", "Conclusive", True, "CrossSession")

    def test_cached_query_ignored_is_ambiguous(self):
        truth = ground_truth(Scenario(name="x", nonce_mode=NonceMode.FRESH_CACHED, cache=CacheMode.QUERY_IGNORED,
                                      cache_status_header=None))
        assert truth.true_cause == "Cache" and truth.cause == "ServerSide" and truth.confidence == "Probable"

    def test_static_single_page_is_ambiguous(self):
        truth = ground_truth(Scenario(name="x", nonce_mode=NonceMode.STATIC, topology=Topology(pages=1)))
        assert truth.confidence == "Probable" and truth.session_scope == "CrossSession"

    def test_session_bound_scope(self):
        assert ground_truth(Scenario(name="x", nonce_mode=NonceMode.SESSION)).session_scope == "SameSessionOnly"

    def test_report_only_meta_is_not_csp(self):
        truth = ground_truth(Scenario(name="x", csp_delivery=CspDelivery.REPORT_ONLY_META))
        assert not truth.uses_csp and not truth.uses_nonce


class TestValidation:
    def test_fresh_cached_needs_cache(self):
        with pytest.raises(ValidationError):
            Scenario(name="x", nonce_mode=NonceMode.FRESH_CACHED)

    def test_bad_name(self):
        with pytest.raises(ValidationError):
            Scenario(name="Bad_Name")

    def test_status_header_must_look_like_one(self):
        with pytest.raises(ValidationError):
            CacheStatusHeader(name="x-served-by")
        with pytest.raises(ValidationError):
            CacheStatusHeader(hit="WHITELIST")

    def test_expected_labels_checked(self):
        with pytest.raises(ValidationError):
            Scenario(name="x", expected={"uses_csp": True, "uses_nonce": True, "reuse": True})

    def test_duplicate_names(self, tmp_path):
        path = tmp_path / "dup.yaml"
        path.write_text("- name: a\n- name: a\n")
        with pytest.raises(ValidationError):
            load_scenarios(path)


def test_load_yaml_and_json(tmp_path):
    yml = tmp_path / "s.yaml"
    yml.write_text("scenarios:\n  - name: one\n    nonce_mode: StaticGlobal\n    cache: QueryInKey\n")
    (scenario,) = load_scenarios(yml)
    assert scenario.nonce_mode is NonceMode.STATIC and scenario.expected.reuse
    js = tmp_path / "s.json"
    js.write_text(json.dumps([{"name": "two", "nonce_length": 8}]))
    assert load_scenarios(js)[0].expected.short


def test_default_matrix_size(matrix):
    assert len(matrix) >= 12
    assert {s.nonce_mode for s in matrix} == set(NonceMode)
    assert {s.cache for s in matrix} == set(CacheMode)
    assert any(not s.expected.decisive and s.expected.reuse for s in matrix)


def test_port_conflict(simulator):
    with pytest.raises(RuntimeError, match="cannot listen"):
        SimulatorServer([Scenario(name="x")], port=simulator.port)
