import numpy as np
import pytest
from hypothesis import settings

from hsngae.sitegraph import Sensor, SiteLayout

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_small_layout():
    """Kitchen (2 sensors) next to a hall (1), bedroom (2) next to the hall only."""
    return SiteLayout(
        "toy",
        (
            Sensor("M001", 5, "kitchen"),
            Sensor("D001", 0, "kitchen"),
            Sensor("M002", 5, "hall"),
            Sensor("L001", 2, "bedroom"),
            Sensor("M003", 5, "bedroom"),
        ),
        frozenset({frozenset({"kitchen", "hall"}), frozenset({"hall", "bedroom"})}),
    )


@pytest.fixture
def small_layout():
    return make_small_layout()


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
