import numpy as np
import pytest

from logdisp import grid as fc


@pytest.fixture
def line64():
    return fc.make_grid(1, 64, 40.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def random_field(rng, grid, batch=()):
    shape = batch + grid.shape
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
