from __future__ import annotations

import numpy as np
import pytest

from reduction_lab.coupling import CouplingSchedule
from reduction_lab.spectrum import Spectrum, diagonal_basis


@pytest.fixture
def desk():
    """Two-level desk case: E = (0, 1), priors (0.3, 0.7)."""
    return Spectrum.from_levels([0.0, 1.0], [0.3, 0.7])


@pytest.fixture
def desk_basis():
    return diagonal_basis(2)


@pytest.fixture
def unit_coupling():
    return CouplingSchedule.constant(1.0)


@pytest.fixture
def three_level():
    return Spectrum.from_levels([-1.0, 0.5, 2.0], [0.2, 0.5, 0.3])


def binomial_sigma(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n))
