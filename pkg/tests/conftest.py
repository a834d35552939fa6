# -- encoding: UTF-8 --
import os

import hypothesis
import numpy as np
import pytest

from kalman_magnetometry.config import load_config
from kalman_magnetometry.core import PhysicalParams, gamma_from_cycles

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", deadline=None, max_examples=25)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.register_profile("thorough", deadline=None, max_examples=200)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the desk-scale acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def params():
    """A small ensemble that still squeezes: J = 1e4 over 0.1 ms."""
    return PhysicalParams(j_total=1e4, gamma=gamma_from_cycles(1.0), b_true=1e-6,
                          meas_strength=1e5, efficiency=1.0, prior_b_variance=1e-10,
                          t_total=1e-4)


@pytest.fixture
def fig2_params():
    return load_config("preset:fig2").params
