"""Pytest configuration and fixtures."""
import pytest
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from pdbench.linalg import SubsystemLayout
from pdbench.services.dsp_service import DspDecomposition
from pdbench.services.sampling_service import sampling_service


@pytest.fixture
def rng():
    """Fixed-seed generator so every test is reproducible."""
    return np.random.default_rng(20240917)


@pytest.fixture
def mixed_decomp():
    """Two blocks with different left and right factors (d_A = 5)."""
    return DspDecomposition(((1, 3), (2, 1)))


@pytest.fixture
def randomizable_decomp():
    """Two blocks satisfying CC1 with r = 2 (d_A = 4)."""
    return DspDecomposition.uniform(2, 2)


@pytest.fixture
def random_state():
    """Factory for random full-rank states on A⊗R."""
    def make(d_a, d_r, rng):
        layout = SubsystemLayout.of(("A", d_a), ("R", d_r))
        return sampling_service.random_density(layout, rng)
    return make


@pytest.fixture
def sample_config_data():
    """Minimal valid experiment config."""
    return {
        "name": "depolarized",
        "decomposition": "J=[(1,2)]",
        "mode": "decoupling-j1",
        "state": {"preset": "random", "reference_dim": 2},
        "channel": {"preset": "completely-depolarizing"},
        "samples": 50,
        "seed": 7,
    }
