import os

import pytest

from intermittent.model import GaussianChangeModel, TwoPointLLRModel


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log(request):
    """Record one pass/fail line per acceptance criterion (printed and summarised)."""

    def log(name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        print(line)
        request.config._acceptance_lines.append(line)

    return log


@pytest.fixture(scope="session")
def budget_scale():
    return float(os.environ.get("INTERMITTENT_BUDGET_SCALE", "0.1"))


@pytest.fixture
def gauss():
    return GaussianChangeModel(1.0, 1.0)


@pytest.fixture
def two_point():
    return TwoPointLLRModel(up=1.0, down=1.0, p_pre=0.3, p_post=0.7)
