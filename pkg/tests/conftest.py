import numpy as np
import pytest
from hypothesis import settings

from deepfid.models import BODModel, LaplaceModel, NonlinearModel
from deepfid.rng import RandomSource

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def laplace():
    return LaplaceModel(m=100)


@pytest.fixture
def nonlinear():
    return NonlinearModel(m=3, q=3.0)


@pytest.fixture
def bod():
    return BODModel()


@pytest.fixture
def rng():
    return RandomSource(12345, 0)


def interior_point(model, rng):
    """A well-conditioned interior parameter for gradient checks."""
    if isinstance(model, LaplaceModel):
        return np.array([rng.normal(()) * 1.0, 0.5 + rng.uniform(())])
    if isinstance(model, NonlinearModel):
        return np.array([0.5 + 4 * rng.uniform(())])
    return np.array([0.5 + rng.uniform(()), 0.05 + 0.2 * rng.uniform(())])
