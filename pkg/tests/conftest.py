import pytest

from confmia.dataset import SynthSpec, generate_synthetic

ACCEPTANCE_LINES = []


@pytest.fixture
def small_ds():
    return generate_synthetic(SynthSpec(3, 4, 10, 1.0, 3.0, seed=5))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
