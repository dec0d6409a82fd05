from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from railtwin.topology import TopologyConfig, build_topology

settings.register_profile(
    "railtwin", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("railtwin")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def cluster():
    """The 100-node, two-pod production layout."""
    return build_topology(TopologyConfig())


@pytest.fixture(scope="session")
def data_dir():
    return DATA
