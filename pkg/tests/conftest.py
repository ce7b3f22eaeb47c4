from __future__ import annotations

import numpy as np
import pytest

from bmdselect.data import QuantalDataset

BCME_DOSES = (0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
BCME_EVENTS = (0, 1, 3, 4, 4, 15, 12)
BCME_SUBJECTS = (240, 41, 26, 18, 18, 34, 20)
BCME_SUBJECTS_AS_TABULATED = (240, 41, 46, 18, 18, 34, 20)


@pytest.fixture(scope="session")
def bcme() -> QuantalDataset:
    """BCME data in standardized doses, 26 animals in the 20 ppm group."""
    return QuantalDataset(np.array(BCME_DOSES), np.array(BCME_SUBJECTS), np.array(BCME_EVENTS),
                          scale=100.0, name="bcme")


@pytest.fixture(scope="session")
def bcme_tabulated() -> QuantalDataset:
    return QuantalDataset(np.array(BCME_DOSES), np.array(BCME_SUBJECTS_AS_TABULATED),
                          np.array(BCME_EVENTS), scale=100.0, name="bcme-tabulated")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
