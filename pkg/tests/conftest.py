import numpy as np
import pytest

from repshare import toygen


@pytest.fixture(scope="session")
def toy_pair(tmp_path_factory):
    """Seed-0 toy model pair shared by the whole session (graphs, inputs, dir)."""
    out = tmp_path_factory.mktemp("toy0")
    ga, gb, inputs = toygen.gen_toy_pair(0, str(out))
    return ga, gb, inputs, out


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
