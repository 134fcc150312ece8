import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for replay_oracle

from spoton import workload


@pytest.fixture(scope="session")
def step_cost_10ms():
    """Busy-work parameter making one workload step take roughly 10 ms."""
    return workload.calibrate_step_cost(0.01)
