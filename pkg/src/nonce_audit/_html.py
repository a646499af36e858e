"""Tolerant single-pass extraction of the few HTML elements the audit cares about."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from html.parser import HTMLParser

log = logging.getLogger(__name__)


@dataclass
class ElementScan:
    base_href: str | None = None
    anchors: list[str] = field(default_factory=list)
    # (http-equiv, content) in document order
    metas: list[tuple[str, str | None]] = field(default_factory=list)
    # (tag, nonce) in document order; tag is "script", "style" or "link"
    nonces: list[tuple[str, str]] = field(default_factory=list)


class _Collector(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.scan = ElementScan()

    def handle_starttag(self, tag, attrs):
        # duplicate attributes: the first one wins, as in browsers
        values: dict[str, str | None] = {}
        for name, value in attrs:
            values.setdefault(name, value)

        if tag == "a":
            href = values.get("href")
            if href is not None:
                self.scan.anchors.append(href)
        elif tag == "base":
            if self.scan.base_href is None and values.get("href"):
                self.scan.base_href = values["href"]
        elif tag == "meta":
            equiv = values.get("http-equiv")
            if equiv is not None:
                self.scan.metas.append((equiv, values.get("content")))

        if tag in ("script", "style", "link"):
            nonce = values.get("nonce")
            if nonce:
                self.scan.nonces.append((tag, nonce))

    handle_startendtag = handle_starttag


def scan_html(text: str) -> ElementScan:
    parser = _Collector()
    try:
        parser.feed(text)
        parser.close()
    except Exception as exc:  # html.parser rarely raises, but never let markup abort a crawl
        log.debug("html parse stopped early: %s", exc)
    return parser.scan
