import numpy as np
import pytest

from dbgfn.env import BuiltinReward, EnvSpec, SequenceEnv
from dbgfn.policy import init_params


@pytest.fixture
def small_env():
    return SequenceEnv(EnvSpec(4, 4, BuiltinReward("separable", {"seed": 1, "scale": 0.5})))


@pytest.fixture
def random_params():
    def make(V=4, L=4, hidden=8, seed=0, backward_mode="uniform", jitter=0.3):
        rng = np.random.default_rng(seed)
        p = init_params(V, L, hidden=hidden, backward_mode=backward_mode, rng=rng)
        # move off the zero-output init so every layer carries gradient
        for a in p.arrays().values():
            a += jitter * rng.standard_normal(a.shape)
        return p

    return make
