"""Local HTTP targets with known nonce behaviour, for testing the scanner."""

from .app import create_app, scenario_domain
from .models import (
    CacheMode,
    CacheStatusHeader,
    CspDelivery,
    ExpectedLabels,
    NonceAlphabet,
    NonceMode,
    Scenario,
    Topology,
    default_matrix,
    ground_truth,
    load_scenarios,
)
from .server import SimulatorServer, serve_forever

__all__ = [
    "CacheMode",
    "CacheStatusHeader",
    "CspDelivery",
    "ExpectedLabels",
    "NonceAlphabet",
    "NonceMode",
    "Scenario",
    "SimulatorServer",
    "Topology",
    "create_app",
    "default_matrix",
    "ground_truth",
    "load_scenarios",
    "scenario_domain",
    "serve_forever",
]
