import numpy as np
import pytest
from hypothesis import settings, strategies as st

from pavtraffic.model import ModelParams, StateVector

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

rates = st.floats(min_value=0.01, max_value=1.0, allow_nan=False)
lockouts = st.sampled_from([0.0, 0.5, 3.0, 7.0])


@st.composite
def small_params(draw, max_k=8):
    return ModelParams(
        lambda1=draw(rates), lambda2=draw(rates), lambda3=draw(rates), lambda4=draw(rates),
        gamma=draw(st.floats(min_value=0.0, max_value=1.0)),
        k=draw(st.integers(min_value=1, max_value=max_k)),
        t_lock_h=draw(lockouts), t_lock_a=draw(lockouts),
    )


@st.composite
def params_and_state(draw, max_k=8):
    params = draw(small_params(max_k=max_k))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    rng = np.random.default_rng(seed)
    x = np.zeros(params.n_states)
    mask = params.live_mask()
    x[mask] = rng.dirichlet(np.full(mask.sum(), 0.5))
    return params, StateVector(x)


@pytest.fixture
def defaults():
    return ModelParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
