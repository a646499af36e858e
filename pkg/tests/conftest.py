import pytest

from nonce_audit.crawler import CrawlBudget, SiteTarget
from nonce_audit.scanner import ScanConfig, scan_site
from nonce_audit.simulator import Scenario, SimulatorServer, Topology, default_matrix

BIG_SITE = Scenario(name="big-site", topology=Topology(subdomains=15, pages=20))
LINKLESS = Scenario(name="linkless", topology=Topology(subdomains=1, pages=1))


@pytest.fixture(scope="session")
def matrix():
    return default_matrix()


@pytest.fixture(scope="session")
def simulator(matrix):
    with SimulatorServer(matrix + [BIG_SITE, LINKLESS]) as sim:
        yield sim


@pytest.fixture
def fast_config(simulator):
    return ScanConfig(budget=CrawlBudget(min_request_interval=0), scheme="http", proxy=simulator.proxy_url)


@pytest.fixture
def scan(simulator, fast_config):
    def run(name, config=None):
        return scan_site(SiteTarget(simulator.domain(name)), config or fast_config)
    return run
