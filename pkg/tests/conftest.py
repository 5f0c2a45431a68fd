import matplotlib
matplotlib.use('Agg')

import numpy as np
import pytest

from dc_bdl_tools.ExperimentLevel import srcnn
from dc_bdl_tools.Utils import autodiff as ad
from dc_bdl_tools.Utils import grid_helpers


@pytest.fixture
def float64():
    """Run a test with 64-bit tensors, restoring the 32-bit default afterwards."""
    ad.set_precision(64)
    yield
    ad.set_precision(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=['gaussian', 'dc_gaussian', 'dc_lognormal'])
def model_tag(request):
    return request.param


def small_network(model_tag='gaussian', filters=(4, 4), kernel_sizes=(3, 3, 3), seed=0, init_p=0.1):
    config = srcnn.NetworkConfig(kernel_sizes, filters, model_tag, init_p=init_p)
    return srcnn.init_weights(config, np.random.default_rng(seed))


@pytest.fixture
def small_dataset(tmp_path):
    """A 16x16, 30-day synthetic dataset written to disk as DCG1."""
    config = grid_helpers.SyntheticConfig(seed=3, height=16, width=16, n_days=30, correlation_length=2.)
    precip, elevation = grid_helpers.generate_synthetic(config)
    data_dir = str(tmp_path / 'data')
    grid_helpers.write_dataset(data_dir, precip, elevation)
    return data_dir, precip, elevation
