import numpy as np
import pytest

from geoctrl.costs import smoothed_l1
from geoctrl.lds import LinearSystem, random_system


@pytest.fixture(scope="session")
def desk_system() -> LinearSystem:
    """The 2x2 instance most experiments run on."""
    return random_system(2, 2, kappa=1.6, gamma=0.5, beta=1.5, seed=100)


@pytest.fixture(scope="session")
def desk_cost():
    return smoothed_l1(2, 2, delta=0.25)


@pytest.fixture(scope="session")
def no_dynamics_system(desk_system) -> LinearSystem:
    return LinearSystem(A=np.zeros((2, 2)), B=desk_system.B, kappa=1.0,
                        gamma=0.5, beta=1.5)
