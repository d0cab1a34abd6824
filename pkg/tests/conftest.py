import numpy as np
import pytest

from lowthrust_mpsp.cases import prepare_context
from lowthrust_mpsp.units import load_scenario


@pytest.fixture(scope="session")
def scenario():
    return load_scenario()


@pytest.fixture(scope="session")
def context(scenario, tmp_path_factory):
    """Nominal solution plus the fitted Fourier control (solved once per session)."""
    cache = tmp_path_factory.mktemp("nominal") / "nominal.json"
    return prepare_context(scenario, cache=cache)


@pytest.fixture(scope="session")
def nominal(context):
    return context.nominal


@pytest.fixture
def rng():
    return np.random.default_rng(20201001)
