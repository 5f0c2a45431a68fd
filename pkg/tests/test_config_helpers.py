import os

import pytest

from dc_bdl_tools.Utils.config_helpers import DEFAULTS, RESOLVED_CONFIG_FILE, RunConfig
from dc_bdl_tools.Utils.errors import ConfigError


def test_defaults():
    config = RunConfig()
    assert config['train.model'] == 'gaussian'
    assert config['network.filters'] == [64, 64]
    assert config['eval.wet_only'] is True
    assert config['data.patch_size'] == 64


def test_parse():
    config = RunConfig.parse("""
        # smoke run
        synthetic.height = 32   # rows
        network.filters = 16, 8
        eval.wet_only = no
        train.learning_rate = 3e-4
        predict.cdf_mode = mc_mixture
    """)
    assert config['synthetic.height'] == 32
    assert config['network.filters'] == [16, 8]
    assert config['eval.wet_only'] is False
    assert config['train.learning_rate'] == 3e-4
    assert config['predict.cdf_mode'] == 'mc_mixture'
    assert config['synthetic.width'] == 64


@pytest.mark.parametrize('text', ['train.moodel = gaussian', 'train.iterations = many', 'eval.wet_only = maybe',
                                  'synthetic.height', 'predict.days = validation', 'train.model = dc-gaussian',
                                  'predict.cdf_mode = matched', 'eval.aggregate = years'])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.parse(text)


def test_update_skips_unset_flags():
    config = RunConfig().update({'train.seed': 5, 'train.iterations': None})
    assert config['train.seed'] == 5
    assert config['train.iterations'] == DEFAULTS['train.iterations']


def test_section():
    section = RunConfig({'synthetic.n_days': 7}).section('synthetic')
    assert section['n_days'] == 7
    assert all('.' not in key for key in section)
    assert len(section) == len([k for k in DEFAULTS if k.startswith('synthetic.')])


def test_unknown_key_lookup():
    with pytest.raises(ConfigError):
        RunConfig()['train.momentum']


def test_resolved_file_round_trip(tmp_path):
    config = RunConfig({'train.tau': 0.1, 'network.kernel_sizes': '5,3,3', 'eval.wet_only': False})
    path = config.write_resolved(str(tmp_path / 'out'))
    assert os.path.basename(path) == RESOLVED_CONFIG_FILE
    assert RunConfig.from_file(path).values == config.values


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.from_file(str(tmp_path / 'missing.txt'))
