import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import worked_example_dlds, worked_example_tree  # noqa: E402


@pytest.fixture
def example_tree():
    return worked_example_tree()


@pytest.fixture
def example_dlds():
    return worked_example_dlds()


@pytest.fixture(scope="session")
def example_compressed():
    from hcproof.compression import compress_with_trace

    return compress_with_trace(worked_example_dlds())


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
