import numpy as np
import pytest

from bdmf import (
    QuadraticPairwise,
    RateModel,
    linear_attraction,
    mm_inf_model,
    power_model,
)


@pytest.fixture
def mm_inf_plain():
    """M/M/inf rates b=1, d=2k; lambda = 2."""
    return mm_inf_model(1.0, 2.0)


@pytest.fixture
def example_21():
    """The linear attraction model: b=k, d=3k, q+=(l-k)+, q-=(k-l)+."""
    return power_model(1.0, 3.0, 1.0, interaction=linear_attraction(1.0))


@pytest.fixture
def mm_inf_attracting():
    """Contractive mean-field model: b=3, d=5k, attraction strength 1 (kappa=3)."""
    return mm_inf_model(3.0, 5.0, interaction=linear_attraction(1.0))


@pytest.fixture
def quadratic_linear():
    """b=k, d=3k with quadratic pairwise attraction (lambda = 2)."""
    return power_model(1.0, 3.0, 1.0, interaction=QuadraticPairwise(a=1.0))


@pytest.fixture
def unit_bd():
    """b=1, d=k: the simplest nontrivial birth-death rates."""
    return RateModel(birth=lambda k: 1.0, death=lambda k: float(k))
