import warnings

import numpy as np
import pytest

from vrsapd.params import CurvatureProfile, ThresholdWarning


def random_profile(rng, zero_lyy=False):
    mu_x, mu_y = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=2))
    L_xx = mu_x * np.exp(rng.uniform(0.0, np.log(50.0)))
    L_yx = np.exp(rng.uniform(np.log(0.01), np.log(20.0)))
    L_yy = 0.0 if zero_lyy else mu_y * np.exp(rng.uniform(0.0, np.log(50.0)))
    return CurvatureProfile(mu_x, mu_y, L_xx, L_yx, L_yy)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_threshold():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdWarning)
        yield
