"""Scenario configuration for the target simulator and its ground-truth labels."""

from __future__ import annotations

import re
from enum import Enum
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

MIN_USEFUL_CHARS = 22


class NonceMode(str, Enum):
    FRESH = "FreshPerRequest"
    STATIC = "StaticGlobal"
    SESSION = "SessionBound"
    FRESH_CACHED = "FreshButCached"


class NonceAlphabet(str, Enum):
    BASE64URL = "Base64Url"
    INVALID = "WithInvalidChar"


class CspDelivery(str, Enum):
    HEADER = "Header"
    META = "Meta"
    BOTH = "Both"
    REPORT_ONLY_HEADER = "ReportOnlyHeader"
    REPORT_ONLY_META = "ReportOnlyMeta"


class CacheMode(str, Enum):
    NONE = "None"
    QUERY_IN_KEY = "QueryInKey"
    QUERY_IGNORED = "QueryIgnored"


class CacheStatusHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "x-cache"
    hit: str = "HIT"
    miss: str = "MISS"

    @model_validator(mode="after")
    def _recognisable(self) -> "CacheStatusHeader":
        # scenarios model caches that label their responses in the usual way
        if "cache" not in self.name.lower():
            raise ValueError("cache status header name must contain 'cache'")
        for value, word in ((self.hit, "HIT"), (self.miss, "MISS")):
            if word not in re.findall(r"[A-Za-z0-9]+", value.upper()):
                raise ValueError(f"{value!r} must contain the word {word}")
        return self


class Topology(BaseModel):
    model_config = ConfigDict(frozen=True)

    subdomains: int = Field(1, ge=1)
    pages: int = Field(3, ge=1)


class ExpectedLabels(BaseModel):
    model_config = ConfigDict(frozen=True)

    uses_csp: bool
    uses_nonce: bool
    reuse: bool
    cause: Optional[str] = None  # what the classifier should report
    true_cause: Optional[str] = None  # what actually causes the reuse
    decisive: bool = False
    confidence: Optional[str] = None
    cached_observed: bool = False
    session_scope: Optional[str] = None
    short: bool = False
    invalid: bool = False


class Scenario(BaseModel):
    name: str = Field(pattern=r"^[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?$")
    nonce_mode: NonceMode = NonceMode.FRESH
    nonce_length: int = Field(22, ge=1, le=256)  # useful characters, padding excluded
    nonce_padding: int = Field(0, ge=0, le=2)
    nonce_alphabet: NonceAlphabet = NonceAlphabet.BASE64URL
    csp_delivery: CspDelivery = CspDelivery.HEADER
    cache: CacheMode = CacheMode.NONE
    # None: the cache layer emits no status header
    cache_status_header: Optional[CacheStatusHeader] = CacheStatusHeader()
    # origin marks pages "no-store", so the cache forwards every request
    no_store: bool = False
    # cached copies carry an Age header (virtual seconds since storage)
    emit_age: bool = False
    topology: Topology = Topology()
    expected: Optional[ExpectedLabels] = None

    @model_validator(mode="after")
    def _check(self) -> "Scenario":
        if self.nonce_mode is NonceMode.FRESH_CACHED and (self.cache is CacheMode.NONE or self.no_store):
            raise ValueError(f"{self.name}: FreshButCached needs a storing cache")
        truth = ground_truth(self)
        if self.expected is None:
            self.expected = truth
        elif self.expected != truth:
            raise ValueError(f"{self.name}: expected labels {self.expected} disagree with construction {truth}")
        return self

    @property
    def cache_stores(self) -> bool:
        return (
            self.cache is not CacheMode.NONE
            and not self.no_store
            and self.nonce_mode is not NonceMode.FRESH
        )

    @property
    def status_header(self) -> Optional[CacheStatusHeader]:
        return self.cache_status_header if self.cache is not CacheMode.NONE else None


def ground_truth(s: Scenario) -> ExpectedLabels:
    """Labels implied by how the scenario is built.

    Reasoned from the simulated origin and cache rather than from the
    classifier: which responses repeat a nonce, whether a cache stored it,
    and which observable signals the scanner can use to tell.
    """
    uses_csp = s.csp_delivery is not CspDelivery.REPORT_ONLY_META
    uses_nonce = s.csp_delivery in (CspDelivery.HEADER, CspDelivery.META, CspDelivery.BOTH)
    short = uses_nonce and s.nonce_length < MIN_USEFUL_CHARS
    invalid = uses_nonce and s.nonce_alphabet is NonceAlphabet.INVALID
    reuse = uses_nonce and s.nonce_mode is not NonceMode.FRESH
    if not reuse:
        return ExpectedLabels(uses_csp=uses_csp, uses_nonce=uses_nonce, reuse=False, short=short, invalid=invalid)

    stores = s.cache_stores
    labelled = s.status_header is not None
    true_cause = "Cache" if s.nonce_mode is NonceMode.FRESH_CACHED else "ServerSide"

    # repeat response forwarded by a labelling cache that did not store it
    origin_labelled_miss = s.cache is not CacheMode.NONE and labelled and not stores
    # cache-busted request reaches the origin only when the query is in the key
    busted_reaches_origin = s.cache is not CacheMode.QUERY_IGNORED or not stores
    busted_changes = busted_reaches_origin and s.nonce_mode is NonceMode.FRESH_CACHED
    busted_labelled_miss = busted_reaches_origin and labelled and not busted_changes
    # static and session nonces repeat on every page of one session
    sitewide = s.nonce_mode in (NonceMode.STATIC, NonceMode.SESSION) and s.topology.subdomains * s.topology.pages >= 2
    decisive = origin_labelled_miss or busted_changes or busted_labelled_miss or sitewide

    cached_observed = stores and (labelled or s.emit_age or busted_changes)
    if stores or s.nonce_mode is NonceMode.STATIC:
        scope = "CrossSession"  # cache ignores cookies, static ignores everything
    else:
        scope = "SameSessionOnly"

    return ExpectedLabels(
        uses_csp=uses_csp,
        uses_nonce=uses_nonce,
        reuse=True,
        cause=true_cause if decisive else "ServerSide",
        true_cause=true_cause,
        decisive=decisive,
        confidence="Conclusive" if decisive else "Probable",
        cached_observed=cached_observed,
        session_scope=scope,
        short=short,
        invalid=invalid,
    )


class ScenarioFile(BaseModel):
    scenarios: list[Scenario]

    @model_validator(mode="after")
    def _unique(self) -> "ScenarioFile":
        names = [s.name for s in self.scenarios]
        if len(names) != len(set(names)):
            raise ValueError("scenario names must be unique")
        return self


def load_scenarios(path: str | Path) -> list[Scenario]:
    """Read a YAML (or JSON) document: a list of scenarios or ``{scenarios: [...]}``."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        data = {"scenarios": data}
    return ScenarioFile.model_validate(data).scenarios


def default_matrix_path() -> Path:
    return Path(__file__).with_name("scenarios.yaml")


def default_matrix() -> list[Scenario]:
    return load_scenarios(default_matrix_path())
