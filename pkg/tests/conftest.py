"""Общие фикстуры тестов."""

import numpy as np
import pytest

from src.services.risk_model import RegionTable
from src.services.simulate import grid_regions
from tests.helpers import path_regions


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20200913)


@pytest.fixture
def path3() -> RegionTable:
    return path_regions(3)


@pytest.fixture
def grid4() -> RegionTable:
    return grid_regions(2, 2, seed=3)
