"""Decide from response headers whether a response came from a cache.

Rules are tried in order and the first one that yields a verdict wins:

1. catalog headers (``data/cache_headers.txt``) matched by value words;
   if any catalog header says Hit the verdict is Hit, otherwise the first
   Miss wins;
2. any other header with "cache" in its name whose value contains the
   word HIT or MISS;
3. an ``Age`` header with an integer value above zero means Hit.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

_WORD = re.compile(r"[A-Za-z0-9]+")
POSITIVE_INT = "<positive-int>"


class CacheStatus(str, enum.Enum):
    HIT = "Hit"
    MISS = "Miss"
    UNKNOWN = "Unknown"


class CacheRule(str, enum.Enum):
    KNOWN_HEADER = "KnownHeader"
    GENERIC = "GenericCacheKeyword"
    AGE = "AgeHeader"


@dataclass(frozen=True)
class CacheVerdict:
    status: CacheStatus
    evidence: tuple[str, str] | None = None
    rule: CacheRule | None = None

    def __post_init__(self):
        if self.status is not CacheStatus.UNKNOWN and self.evidence is None:
            raise ValueError("a Hit or Miss verdict needs evidence")

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "evidence": list(self.evidence) if self.evidence else None,
            "rule": self.rule.value if self.rule else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CacheVerdict":
        evidence = tuple(data["evidence"]) if data.get("evidence") else None
        rule = CacheRule(data["rule"]) if data.get("rule") else None
        return cls(CacheStatus(data["status"]), evidence, rule)


UNKNOWN = CacheVerdict(CacheStatus.UNKNOWN)


@dataclass(frozen=True)
class HeaderCatalog:
    version: str
    rules: dict[str, dict[str, CacheStatus]]

    def __contains__(self, header: str) -> bool:
        return header.lower() in self.rules

    def match(self, header: str, value: str) -> CacheStatus | None:
        table = self.rules.get(header.lower())
        if not table:
            return None
        found = None
        for word in _WORD.findall(value):
            status = table.get(word.upper())
            if status is None and word.isdigit() and int(word) > 0:
                status = table.get(POSITIVE_INT)
            if status is CacheStatus.HIT:
                return status
            if status is not None and found is None:
                found = status
        return found


def parse_catalog(text: str) -> HeaderCatalog:
    version = "unversioned"
    rules: dict[str, dict[str, CacheStatus]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("#") and "catalog-version:" in stripped:
            version = stripped.split("catalog-version:", 1)[1].strip()
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        try:
            header, rule = body.split()
            token, verdict = rule.rsplit("=", 1)
            status = {"hit": CacheStatus.HIT, "miss": CacheStatus.MISS}[verdict.lower()]
        except (ValueError, KeyError):
            raise ValueError(f"catalog line {lineno}: expected '<header> <token>=<Hit|Miss>', got {line!r}") from None
        key = token if token == POSITIVE_INT else token.upper()
        rules.setdefault(header.lower(), {})[key] = status
    return HeaderCatalog(version, rules)


def load_catalog(path: str | Path | None = None) -> HeaderCatalog:
    if path is None:
        return default_catalog()
    return parse_catalog(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def default_catalog() -> HeaderCatalog:
    text = resources.files("nonce_audit").joinpath("data/cache_headers.txt").read_text(encoding="utf-8")
    return parse_catalog(text)


def _generic(value: str) -> CacheStatus | None:
    words = {w.upper() for w in _WORD.findall(value)}
    if "HIT" in words:
        return CacheStatus.HIT
    if "MISS" in words:
        return CacheStatus.MISS
    return None


def classify_response(headers: Iterable[tuple[str, str]], catalog: HeaderCatalog | None = None) -> CacheVerdict:
    catalog = catalog or default_catalog()
    headers = list(headers)

    first_miss = None
    for name, value in headers:
        status = catalog.match(name, value)
        if status is CacheStatus.HIT:
            return CacheVerdict(status, (name, value), CacheRule.KNOWN_HEADER)
        if status is CacheStatus.MISS and first_miss is None:
            first_miss = CacheVerdict(status, (name, value), CacheRule.KNOWN_HEADER)
    if first_miss:
        return first_miss

    for name, value in headers:
        if "cache" not in name.lower() or name in catalog:
            continue
        status = _generic(value)
        if status is not None:
            return CacheVerdict(status, (name, value), CacheRule.GENERIC)

    for name, value in headers:
        if name.lower() == "age":
            try:
                age = int(value.strip())
            except ValueError:
                continue
            if age > 0:
                return CacheVerdict(CacheStatus.HIT, (name, value), CacheRule.AGE)
            break
    return UNKNOWN
