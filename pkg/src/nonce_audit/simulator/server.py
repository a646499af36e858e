"""Run the simulator app with uvicorn, in the foreground or on a background thread."""

from __future__ import annotations

import socket
import threading
import time

import uvicorn

from .app import SimulatorState, create_app, scenario_domain
from .models import Scenario


def bind(host: str, port: int) -> socket.socket:
    """Bind the listening socket up front so a port conflict fails loudly here."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise RuntimeError(f"simulator cannot listen on {host}:{port}: {exc}") from exc
    sock.listen(128)
    return sock


class SimulatorServer:
    """Background simulator; use as a context manager.

    >>> with SimulatorServer(scenarios) as sim:
    ...     session = Session(proxy=sim.proxy_url)
    """

    def __init__(self, scenarios: list[Scenario], host: str = "127.0.0.1", port: int = 0,
                 base_domain: str = "sim.test"):
        self.scenarios = list(scenarios)
        self.base_domain = base_domain
        self.app = create_app(self.scenarios, base_domain)
        self._sock = bind(host, port)
        self.host, self.port = self._sock.getsockname()[:2]
        config = uvicorn.Config(self.app, log_level="warning", lifespan="off", access_log=False)
        self._server = uvicorn.Server(config)
        self._thread: threading.Thread | None = None

    @property
    def state(self) -> SimulatorState:
        return self.app.state.sim

    @property
    def proxy_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def domain(self, name: str) -> str:
        for scenario in self.scenarios:
            if scenario.name == name:
                return scenario_domain(scenario, self.base_domain)
        raise KeyError(name)

    def requests(self) -> list[dict]:
        return self.state.snapshot()

    def start(self, timeout: float = 10.0) -> "SimulatorServer":
        self._thread = threading.Thread(
            target=self._server.run, kwargs={"sockets": [self._sock]}, daemon=True, name="nonce-audit-simulator"
        )
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if not self._thread.is_alive() or time.monotonic() > deadline:
                raise RuntimeError("simulator failed to start")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5)
        self._sock.close()

    def __enter__(self) -> "SimulatorServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_forever(scenarios: list[Scenario], host: str = "127.0.0.1", port: int = 8080,
                  base_domain: str = "sim.test") -> None:
    sock = bind(host, port)
    app = create_app(scenarios, base_domain)
    config = uvicorn.Config(app, log_level="info", lifespan="off")
    uvicorn.Server(config).run(sockets=[sock])
