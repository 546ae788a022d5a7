import os
import sys
import tempfile

# Keep the rotating log out of the working tree
os.environ.setdefault("NUCSEG_HOME", tempfile.mkdtemp(prefix="nucseg-tests-"))

# Add project root to path (same as main.py)
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.synthetic import disk_map, dumbbell, planted_nuclei  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dumbbell_maps():
    """(merged single-instance map, two-disk truth)."""
    return dumbbell(radius=10, separation=16)


@pytest.fixture
def three_disks():
    return disk_map((64, 64), [(15, 15), (15, 45), (45, 30)], radius=8)


@pytest.fixture(scope="session")
def planted():
    """One dense planted-nuclei image with its truth."""
    return planted_nuclei(shape=(200, 200), n_nuclei=40, seed=7)


@pytest.fixture
def no_env():
    return {}
