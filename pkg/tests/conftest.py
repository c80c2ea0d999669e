import numpy as np
import pytest

from meanfield_nash import TorusGrid, normalize


def seeded_density(grid: TorusGrid, rng, floor: float = 0.1):
    """Strictly positive random density."""
    return normalize(floor + rng.random(grid.cell_count), grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
