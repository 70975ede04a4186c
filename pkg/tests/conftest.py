from __future__ import annotations

import pytest

from hybridqnet.topology import build_network, synth_nodes

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def small_graph():
    """A 600-node synthetic network, cheap enough for routing tests."""
    return build_network(synth_nodes(3, 600), 3, meta={"seed": 3})


@pytest.fixture(scope="session")
def verdicts() -> list[str]:
    """One PASS/FAIL line per acceptance criterion, echoed in the terminal summary."""
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
