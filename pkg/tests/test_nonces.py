import base64

import pytest
from hypothesis import given, strategies as st

from nonce_audit.nonces import (
    NonceLocation,
    NonceObservation,
    check_length,
    check_validity,
    extract_dom_nonces,
)


def test_script_nonce_extracted():
    (obs,) = extract_dom_nonces('<script nonce="cmFuZG9t">console.log(1)</script>', "https://s.ex/", 1)
    assert obs.value == "cmFuZG9t"
    assert obs.location is NonceLocation.SCRIPT
    assert obs.page_url == "https://s.ex/" and obs.probe_index == 1


def test_scripts_without_nonce():
    assert extract_dom_nonces("<script>a()</script><script src=x.js></script>", "u", 1) == []


def test_shared_nonce_gives_one_observation_per_element():
    html = '<script nonce="n1">a</script><p><script nonce="n1">b</script>'
    assert [o.value for o in extract_dom_nonces(html, "u", 2)] == ["n1", "n1"]


def test_style_and_link_reported_separately_in_document_order():
    html = '<style nonce="s">x</style><script nonce="j"></script><link rel=stylesheet nonce="l" href=a.css>'
    obs = extract_dom_nonces(html, "u", 1)
    assert [(o.location, o.value) for o in obs] == [
        (NonceLocation.STYLE, "s"), (NonceLocation.SCRIPT, "j"), (NonceLocation.STYLE, "l"),
    ]


def test_value_kept_verbatim():
    (obs,) = extract_dom_nonces('<script nonce=" padded ">x</script>', "u", 1)
    assert obs.value == " padded "


def test_malformed_markup_tolerated():
    # "<div <script ...>" is a div carrying odd attributes, as browsers tokenize it
    html = '<div <script nonce="ok1">x</script><script nonce=\'ok2\' <p>'
    assert [o.value for o in extract_dom_nonces(html, "u", 1)] == ["ok2"]
    assert extract_dom_nonces('<script nonce="unterminated', "u", 1) == []


@given(
    st.from_regex(r"[A-Za-z0-9+/=_\-]{1,30}", fullmatch=True),
    st.sampled_from(['"', "'"]),
    st.booleans(),
)
def test_quoting_and_attribute_order_irrelevant(value, quote, nonce_first):
    attrs = [f"nonce={quote}{value}{quote}", 'type="text/javascript"', "async"]
    if not nonce_first:
        attrs.reverse()
    html = f"<script {' '.join(attrs)}>x</script>"
    assert [o.value for o in extract_dom_nonces(html, "u", 1)] == [value]


def test_observation_invariants():
    with pytest.raises(ValueError):
        NonceObservation("", NonceLocation.SCRIPT, "u", 1)
    with pytest.raises(ValueError):
        NonceObservation("x", NonceLocation.SCRIPT, "u", 5)


def test_length_examples():
    v = check_length("cmFuZG9t")
    assert (v.useful_chars, v.is_short, v.estimated_bits) == (8, True, 48)
    v = check_length("A" * 22)
    assert (v.useful_chars, v.is_short, v.estimated_bits) == (22, False, 132)
    v = check_length("QUJDRA==")
    assert (v.useful_chars, v.is_short) == (6, True)
    assert check_length("A" * 21).is_short
    assert not check_length("A" * 22 + "==").is_short


def test_length_interior_padding_counts():
    assert check_length("ab=cd").useful_chars == 5


def test_length_empty_rejected():
    with pytest.raises(ValueError):
        check_length("")


@given(st.text(min_size=1, max_size=60))
def test_length_properties(value):
    v = check_length(value)
    assert v.estimated_bits == 6 * v.useful_chars
    assert v.is_short == (v.estimated_bits < 132)
    assert v.is_short == (v.useful_chars < 22)


def test_validity_examples():
    assert check_validity("cmFuZG9t").is_valid
    v = check_validity("abc$def")
    assert not v.is_valid and v.offending_chars == {"$"}
    v = check_validity("a b")
    assert not v.is_valid and v.offending_chars == {" "}


def test_validity_notes():
    assert check_validity("ab+/cd").notes == ("uses standard base64 characters outside base64url",)
    assert check_validity("ab+_cd").notes == ("mixes standard and url-safe base64 alphabets",)
    assert check_validity("ab=cd").notes == ("padding character before the end of the value",)
    assert check_validity("ab-_cd==").notes == ()


@given(st.binary(min_size=1, max_size=48), st.booleans())
def test_encoded_random_bytes_always_valid(raw, urlsafe):
    encoded = (base64.urlsafe_b64encode if urlsafe else base64.b64encode)(raw).decode()
    verdict = check_validity(encoded)
    assert verdict.is_valid and not verdict.offending_chars
