from pathlib import Path

import pytest

from sgkit.io import parse_record

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def rec_482063():
    return parse_record((FIXTURES / "example_482063.json").read_text())


@pytest.fixture
def rec_483868():
    return parse_record((FIXTURES / "example_483868.json").read_text())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
