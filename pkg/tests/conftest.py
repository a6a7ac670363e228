import numpy as np
import pytest

from gridrisk.config import resolve_case
from gridrisk.labels import label_scenarios
from gridrisk.scenarios import generate_scenarios
from gridrisk.scuc import ScucConfig


@pytest.fixture(scope="session")
def case6():
    return resolve_case("case6z")


@pytest.fixture(scope="session")
def small_labeled(case6):
    """40 scenarios over 4 steps, labelled with the production solver settings."""
    scen = generate_scenarios(case6, 40, 4, seed=5)
    labels = label_scenarios(case6, scen, ScucConfig(lp_method="highs"))
    assert np.all(labels.status < 2)
    return scen, labels
