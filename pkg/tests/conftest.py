import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stochlemma import aircraft as ac  # noqa: E402


@pytest.fixture(scope="session")
def plant():
    return ac.model()


@pytest.fixture(scope="session")
def spec():
    return ac.disturbance_spec()


@pytest.fixture(scope="session")
def experiment():
    """Offline records of all three variants for root seed 0."""
    return ac.prepare_data(0)
