import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pkmdyn import build_delta, build_fourbar  # noqa: E402


@pytest.fixture(scope="session")
def delta():
    return build_delta()


@pytest.fixture(scope="session")
def delta_cb():
    return build_delta(formulation="cut_body")


@pytest.fixture(scope="session")
def fourbar():
    return build_fourbar()


@pytest.fixture(scope="session")
def parallelogram():
    return build_fourbar(lengths=(0.4, 0.15, 0.4, 0.15))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
