import numpy as np
import pytest

from scoreclimb.numkit import RngStream


@pytest.fixture
def gen():
    """Fresh deterministic generator per test."""
    return RngStream(20_240_817).generator()


@pytest.fixture
def rng_stream():
    return RngStream(20_240_817)


def assert_close(actual, expected, atol=0.0, rtol=1e-12, msg=""):
    np.testing.assert_allclose(actual, expected, atol=atol, rtol=rtol, err_msg=msg)
