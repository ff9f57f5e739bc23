from __future__ import annotations

import ipaddress
import socket
import sys
from datetime import datetime
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from support import table1_records  # noqa: E402

from vulntrend.ingest import ManualClock  # noqa: E402
from vulntrend.timeutil import UTC  # noqa: E402

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    label = getattr(report, "acceptance_label", None)
    if label is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(report.nodeid)
        if prev is None or prev[1] == "PASS":
            _acceptance[report.nodeid] = (label, "PASS" if report.outcome == "passed" else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance_label = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict in sorted(_acceptance.values(), key=lambda lv: int(lv[0].split()[0].lstrip("AC"))):
        terminalreporter.write_line(f"[{verdict}] {label}")


@pytest.fixture(autouse=True, scope="session")
def _loopback_only():
    """The suite must pass offline; refuse any connection that leaves the host."""
    real_connect = socket.socket.connect

    def guarded(sock, address):
        if sock.family in (socket.AF_INET, socket.AF_INET6):
            host = address[0]
            try:
                loopback = ipaddress.ip_address(host).is_loopback
            except ValueError:
                loopback = host == "localhost"
            if not loopback:
                raise OSError(f"network access blocked in tests: {host}")
        return real_connect(sock, address)

    socket.socket.connect = guarded
    yield
    socket.socket.connect = real_connect


@pytest.fixture
def clock():
    return ManualClock(datetime(2018, 9, 1, tzinfo=UTC))


@pytest.fixture(scope="session")
def table1():
    return table1_records()
