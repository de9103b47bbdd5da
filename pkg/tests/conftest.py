"""
Shared fixtures for mobileclinic tests.

=============================================================================
TEST VALIDATION WORKFLOW - ALL TESTS MUST FOLLOW THIS
=============================================================================

Every test function MUST have a docstring with:
   - "Validates:" section describing what behavior is tested
   - "Synthetic Input:" section with the concrete instance or values
   - "Prediction:" section with the expected outcome, traced by hand
     or against the brute-force oracle in tests/factories.py

Check with:
    python scripts/validate_tests.py

Example:
    def test_something(toy):
        \"\"\"
        Validates: build_cover keeps clients whose visited set reaches a site.

        Synthetic Input:
            - toy line instance, R = 2

        Prediction:
            sets a = {p1}, c = {p1, p2}
        \"\"\"
        # Arrange / Act / Assert ...

=============================================================================
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))
from mobileclinic.covering import CoverInstance

from .factories import build_toy, line_instance


# =============================================================================
# PYTEST CONFIGURATION FOR SLOW TESTS
# =============================================================================

def pytest_addoption(parser):
    """Add the --slow option for full-scale runs."""
    parser.addoption(
        "--slow",
        action="store_true",
        default=False,
        help="run full-scale tests (minutes each)",
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "slow: marks full-scale runs (enable with '--slow' or MOBILECLINIC_SLOW=1)",
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --slow is given or MOBILECLINIC_SLOW is set."""
    if config.getoption("--slow") or os.environ.get("MOBILECLINIC_SLOW"):
        return
    skip_slow = pytest.mark.skip(reason="need --slow option or MOBILECLINIC_SLOW env var to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# =============================================================================
# FIXTURES
# =============================================================================

@pytest.fixture
def toy():
    """The toy line instance (see tests/factories.py)."""
    return build_toy()


@pytest.fixture
def make_line():
    """
    Factory for line instances.

    Usage:
        inst = make_line({"a": 0, "b": 1}, {"p1": ({"a"}, None)}, {"a", "b"})
    """
    return line_instance


@pytest.fixture
def popularity_instance():
    """Clients visiting {a}, {a}, {b}; sites {a, b}; a and b 1 km apart."""
    return line_instance(
        {"a": 0, "b": 1},
        {"p1": ({"a"}, None), "p2": ({"a"}, None), "p3": ({"b"}, None)},
        {"a", "b"},
    )


@pytest.fixture
def abc_cover():
    """Universe {1,2,3,4}; A={1,2,3}, B={3,4}, C={1,4}."""
    return CoverInstance.from_sets({"A": {1, 2, 3}, "B": {3, 4}, "C": {1, 4}})


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
