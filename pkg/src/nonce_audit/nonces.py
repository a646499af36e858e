"""Nonces used in documents, and checks on their length and encoding."""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass
from typing import Iterable

from ._html import ElementScan, scan_html
from .csp import Policy, PolicySet, nonce_sources

MIN_USEFUL_CHARS = 22
BITS_PER_CHAR = 6

_COMMON = frozenset(string.ascii_letters + string.digits)
_STANDARD_ONLY = frozenset("+/")
_URLSAFE_ONLY = frozenset("-_")
ALPHABET = _COMMON | _STANDARD_ONLY | _URLSAFE_ONLY | {"="}


class NonceLocation(str, enum.Enum):
    POLICY = "policy"
    SCRIPT = "script"
    STYLE = "style"


@dataclass(frozen=True)
class NonceObservation:
    value: str
    location: NonceLocation
    page_url: str
    probe_index: int
    directive: str | None = None  # set for POLICY observations

    def __post_init__(self):
        if not self.value:
            raise ValueError("nonce observation with empty value")
        if self.probe_index not in (1, 2, 3, 4):
            raise ValueError(f"probe_index must be 1..4, got {self.probe_index}")


@dataclass(frozen=True)
class LengthVerdict:
    useful_chars: int
    is_short: bool

    @property
    def estimated_bits(self) -> int:
        return self.useful_chars * BITS_PER_CHAR


@dataclass(frozen=True)
class ValidityVerdict:
    is_valid: bool
    offending_chars: frozenset[str]
    notes: tuple[str, ...] = ()


def extract_dom_nonces(html: str | ElementScan, page_url: str, probe_index: int) -> list[NonceObservation]:
    scan = html if isinstance(html, ElementScan) else scan_html(html)
    observations = []
    for tag, value in scan.nonces:
        location = NonceLocation.SCRIPT if tag == "script" else NonceLocation.STYLE
        observations.append(NonceObservation(value, location, page_url, probe_index))
    return observations


def extract_policy_nonces(policies: Iterable[Policy], page_url: str, probe_index: int) -> list[NonceObservation]:
    return [
        NonceObservation(value, NonceLocation.POLICY, page_url, probe_index, directive=name)
        for policy in policies
        for name, value in nonce_sources(policy)
    ]


def script_values(observations: Iterable[NonceObservation]) -> list[str]:
    seen: dict[str, None] = {}
    for obs in observations:
        if obs.location is NonceLocation.SCRIPT:
            seen.setdefault(obs.value)
    return list(seen)


def page_uses_nonce(policies: PolicySet, scan: ElementScan) -> bool:
    """True when an enforced policy carries a nonce source and a script tag carries a nonce."""
    if not any(nonce_sources(p) for p in policies.enforced):
        return False
    return any(tag == "script" for tag, _ in scan.nonces)


def check_length(value: str) -> LengthVerdict:
    if not value:
        raise ValueError("cannot judge the length of an empty nonce")
    useful = len(value.rstrip("="))
    return LengthVerdict(useful, useful < MIN_USEFUL_CHARS)


def check_validity(value: str) -> ValidityVerdict:
    offending = frozenset(c for c in value if c not in ALPHABET)
    notes = []
    chars = set(value)
    std, url = chars & _STANDARD_ONLY, chars & _URLSAFE_ONLY
    if std and url:
        notes.append("mixes standard and url-safe base64 alphabets")
    elif std:
        notes.append("uses standard base64 characters outside base64url")
    if "=" in value.rstrip("="):
        notes.append("padding character before the end of the value")
    return ValidityVerdict(not offending, offending, tuple(notes))
