import hypothesis
import numpy as np
import pytest

from agingquant.aging import DelayModel
from agingquant.netlist import build_mac, build_multiplier
from agingquant.nn import make_dataset, train

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

np.seterr(over="raise", invalid="raise")

GOLDEN_SEED = 0


@pytest.fixture(scope="session")
def mult():
    return build_multiplier(8)


@pytest.fixture(scope="session")
def mac():
    return build_mac()


@pytest.fixture(scope="session")
def delay_model():
    return DelayModel()


@pytest.fixture(scope="session")
def dataset():
    return make_dataset(GOLDEN_SEED)


@pytest.fixture(scope="session")
def model(dataset):
    return train(dataset, seed=GOLDEN_SEED)
