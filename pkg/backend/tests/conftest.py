# backend/tests/conftest.py
import numpy as np
import pytest

from models import PilotConfig, ScenarioConfig
from services.array_model import ArrayGeometry, SubArrayLayout
from services.measurement import generate_combiner


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_scenario():
    return ScenarioConfig()


@pytest.fixture
def desk_geom(desk_scenario):
    return ArrayGeometry.from_scenario(desk_scenario)


@pytest.fixture
def desk_layout(desk_scenario):
    return SubArrayLayout.from_scenario(desk_scenario)


@pytest.fixture
def desk_combiner(rng, desk_geom):
    return generate_combiner(rng, desk_geom, PilotConfig(n_slots=16, n_rf=4))
