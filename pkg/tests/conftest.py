import numpy as np
import pytest
from hypothesis import settings

from oir.mdp import SoftmaxPolicy, random_mdp

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdp(rng):
    return random_mdp(4, 3, rng)


@pytest.fixture
def random_policy(small_mdp, rng):
    return SoftmaxPolicy(rng.normal(size=(small_mdp.n_states, small_mdp.n_actions)))
