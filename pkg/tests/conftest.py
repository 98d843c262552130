import numpy as np
import pytest

from stimfolio.designs import UNIFORM, Design
from stimfolio.formation import FormationParams, FormationRealization
from stimfolio.fracsim import SimConfig

BASE_CASE = Design(0.25, 0.003, 50.0, 0.2, 1.06e10, UNIFORM)


def stratum_counts(values, lo, hi, n_strata):
    """Occupancy of ``n_strata`` equal bins over [lo, hi]."""
    counts = [0] * n_strata
    width = (hi - lo) / n_strata
    for v in np.asarray(values).ravel():
        k = int((v - lo) // width)
        counts[min(max(k, 0), n_strata - 1)] += 1
    return counts


@pytest.fixture
def homogeneous():
    return FormationRealization.homogeneous(FormationParams(), 5)


@pytest.fixture
def sim_config():
    return SimConfig()
