"""Content-Security-Policy extraction, parsing and inline-script evaluation."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ._html import ElementScan, scan_html

CSP_HEADER = "content-security-policy"
CSP_REPORT_ONLY_HEADER = "content-security-policy-report-only"

REPORT_ONLY_META = "report-only-meta"

_SCHEME_SOURCE = re.compile(r"^[a-zA-Z][a-zA-Z0-9+.\-]*:$")
_HASH_PREFIXES = ("'sha256-", "'sha384-", "'sha512-")


class Disposition(str, enum.Enum):
    ENFORCE = "enforce"
    REPORT_ONLY = "report-only"


class Delivery(str, enum.Enum):
    HEADER = "header"
    META = "meta"


class SourceKind(str, enum.Enum):
    KEYWORD = "keyword"
    HOST = "host"
    SCHEME = "scheme"
    NONCE = "nonce"
    HASH = "hash"


@dataclass(frozen=True)
class SourceExpression:
    kind: SourceKind
    value: str
    nonce_value: str | None = None

    @classmethod
    def parse(cls, token: str) -> "SourceExpression":
        lowered = token.lower()
        if lowered.startswith("'nonce-") and token.endswith("'") and len(token) > len("'nonce-'"):
            return cls(SourceKind.NONCE, token, token[len("'nonce-"):-1])
        if lowered.startswith(_HASH_PREFIXES) and token.endswith("'"):
            return cls(SourceKind.HASH, token)
        if len(token) >= 2 and token.startswith("'") and token.endswith("'"):
            return cls(SourceKind.KEYWORD, token)
        if _SCHEME_SOURCE.match(token):
            return cls(SourceKind.SCHEME, token)
        return cls(SourceKind.HOST, token)

    @property
    def keyword(self) -> str | None:
        if self.kind is SourceKind.KEYWORD:
            return self.value[1:-1].lower()
        return None


@dataclass
class Policy:
    directives: dict[str, list[SourceExpression]]
    disposition: Disposition
    delivery: Delivery
    raw: str
    warnings: list[str] = field(default_factory=list)

    @property
    def enforced(self) -> bool:
        return self.disposition is Disposition.ENFORCE

    def tokens(self) -> dict[str, list[str]]:
        return {name: [s.value for s in sources] for name, sources in self.directives.items()}

    def serialize(self) -> str:
        return "; ".join(" ".join([name, *values]) for name, values in self.tokens().items())


@dataclass
class PolicySet:
    policies: list[Policy] = field(default_factory=list)
    source_url: str = ""
    # e.g. REPORT_ONLY_META when a meta tag tries report-only delivery
    findings: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    @property
    def enforced(self) -> list[Policy]:
        return [p for p in self.policies if p.enforced]

    @property
    def report_only(self) -> list[Policy]:
        return [p for p in self.policies if not p.enforced]


def parse_policy(
    text: str,
    disposition: Disposition = Disposition.ENFORCE,
    delivery: Delivery = Delivery.HEADER,
) -> Policy:
    """Split a serialized policy into directives.

    Directive names are lowercased; when a name repeats, only the first
    occurrence is kept and a warning is recorded for the rest.
    """
    directives: dict[str, list[SourceExpression]] = {}
    warnings: list[str] = []
    for segment in text.split(";"):
        tokens = segment.split()
        if not tokens:
            continue
        name = tokens[0].lower()
        if name in directives:
            warnings.append(f"duplicate directive ignored: {name}")
            continue
        directives[name] = [SourceExpression.parse(t) for t in tokens[1:]]
    if not directives:
        warnings.append("empty policy")
    return Policy(directives, disposition, delivery, text, warnings)


def _split_header_value(value: str) -> list[str]:
    # a comma separates independent policies inside one header field
    return [part.strip() for part in value.split(",") if part.strip()]


def extract_policies(
    headers: Iterable[tuple[str, str]],
    body: str = "",
    source_url: str = "",
    scan: ElementScan | None = None,
) -> PolicySet:
    """Collect every CSP delivered by a response, headers first then meta tags."""
    result = PolicySet(source_url=source_url)
    for name, value in headers:
        lname = name.lower()
        if lname == CSP_HEADER:
            disposition = Disposition.ENFORCE
        elif lname == CSP_REPORT_ONLY_HEADER:
            disposition = Disposition.REPORT_ONLY
        else:
            continue
        for text in _split_header_value(value):
            result.policies.append(parse_policy(text, disposition, Delivery.HEADER))

    if scan is None:
        scan = scan_html(body or "")
    for equiv, content in scan.metas:
        lequiv = equiv.strip().lower()
        if lequiv == CSP_REPORT_ONLY_HEADER:
            result.findings.append(REPORT_ONLY_META)
        elif lequiv == CSP_HEADER:
            if not content or not content.strip():
                result.warnings.append("meta content-security-policy without content")
                continue
            result.policies.append(parse_policy(content, Disposition.ENFORCE, Delivery.META))

    for policy in result.policies:
        result.warnings.extend(policy.warnings)
    return result


def nonce_sources(policy: Policy) -> list[tuple[str, str]]:
    return [
        (name, source.nonce_value)
        for name, sources in policy.directives.items()
        for source in sources
        if source.kind is SourceKind.NONCE
    ]


def governing_directive(policy: Policy, directive: str = "script-src") -> list[SourceExpression] | None:
    if directive in policy.directives:
        return policy.directives[directive]
    return policy.directives.get("default-src")


def allows_inline_script(policy: Policy, script_nonce: str | None) -> bool:
    """Whether an inline script carrying ``script_nonce`` may run under ``policy``.

    A nonce or hash in the governing directive disables 'unsafe-inline'.
    Hash matching against script bodies is not performed.
    """
    sources = governing_directive(policy)
    if sources is None:
        return True
    nonces = [s.nonce_value for s in sources if s.kind is SourceKind.NONCE]
    if script_nonce is not None and script_nonce in nonces:
        return True
    has_hash = any(s.kind is SourceKind.HASH for s in sources)
    unsafe_inline = any(s.keyword == "unsafe-inline" for s in sources)
    return unsafe_inline and not nonces and not has_hash


def has_nonce_source(policies: Sequence[Policy]) -> bool:
    return any(nonce_sources(p) for p in policies)
