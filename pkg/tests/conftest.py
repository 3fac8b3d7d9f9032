import numpy as np
import pytest

from freebound.calculus import ProblemData
from freebound.grid import DomainRep, Grid


@pytest.fixture(scope="session")
def grid128():
    return Grid.box([-2.0, -2.0], [2.0, 2.0], 128)


@pytest.fixture(scope="session")
def unit_ball_128(grid128):
    return DomainRep.from_callable(
        grid128, lambda X, Y: 1.0 - np.sqrt(X**2 + Y**2)
    )


@pytest.fixture(scope="session")
def constant_data():
    """f = g = 1, Q = 1/4; the radial optimum of this data is the unit ball."""
    return ProblemData.constants(2, f=1.0, g=1.0, Q=0.25)
