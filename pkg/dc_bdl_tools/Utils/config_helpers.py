"""
Run configuration of the command line tools: flat key=value text with dotted section keys, for example

    # 32 x 32 smoke run
    synthetic.height = 32
    synthetic.width = 32
    train.iterations = 200
    network.filters = 16,16

Every key has a default that fixes its type. Unknown keys and values that do not parse as that type raise
ConfigError.
"""
import os
from collections import OrderedDict

from dc_bdl_tools.Utils.errors import ConfigError

RESOLVED_CONFIG_FILE = 'resolved_config.txt'

DEFAULTS = OrderedDict([
    # synthetic generator
    ('synthetic.seed', 0),
    ('synthetic.height', 64),
    ('synthetic.width', 64),
    ('synthetic.n_days', 100),
    ('synthetic.correlation_length', 4.),
    ('synthetic.rain_fraction', 0.3),
    ('synthetic.intensity_mu', 1.5),
    ('synthetic.intensity_sigma', 0.8),
    ('synthetic.elevation_coeff', 0.3),
    ('synthetic.cell_size', 4.),

    # derived inputs, patches and the train/test split
    ('data.upscale_factor', 4),
    ('data.patch_size', 64),
    ('data.stride', 48),
    ('data.test_fraction', 0.2),

    # network
    ('network.kernel_sizes', [9, 3, 5]),
    ('network.filters', [64, 64]),
    ('network.temperature', 0.1),
    ('network.init_p', 0.1),

    # training
    ('train.model', 'gaussian'),
    ('train.learning_rate', 1e-4),
    ('train.batch_size', 10),
    ('train.iterations', 10000),
    ('train.tau', 1e-5),
    ('train.length_scale', 1.),
    ('train.seed', 0),
    ('train.log_every', 100),

    # inference
    ('predict.passes', 50),
    ('predict.seed', 0),
    ('predict.cdf_mode', 'moment_matched'),
    ('predict.chunk_size', 10),
    ('predict.days', 'test'),

    # evaluation
    ('eval.n_bins', 100),
    ('eval.wet_only', True),
    ('eval.aggregate', 'pixels'),
    ('eval.days_per_year', 365),
    ('eval.seed', 0),
])

# string settings restricted to a fixed set of values
CHOICES = {
    'train.model': ('gaussian', 'dc_gaussian', 'dc_lognormal'),
    'predict.cdf_mode': ('moment_matched', 'mc_mixture'),
    'predict.days': ('test', 'train', 'all'),
    'eval.aggregate': ('pixels', 'days'),
}

_TRUE = ('true', 'yes', '1', 'on')
_FALSE = ('false', 'no', '0', 'off')


def _convert(key, value, default):
    """Cast value (usually a string) to the type of default."""
    if not isinstance(value, str):
        text = None
    else:
        text = value.strip()
    try:
        if isinstance(default, bool):
            if text is None:
                return bool(value)
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(value) if text is None else int(text)
        if isinstance(default, float):
            return float(value) if text is None else float(text)
        if isinstance(default, list):
            if text is None:
                return [int(v) for v in value]
            return [int(v) for v in text.split(',') if v.strip()]
        return value if text is None else text
    except (TypeError, ValueError):
        raise ConfigError('{}: cannot parse {!r} as {}'.format(key, value, type(default).__name__))


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ','.join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig(object):
    """
    Resolved settings of a command. Start from the defaults, apply a config file, then command line flags.
    """

    def __init__(self, values=None):
        self.values = OrderedDict(DEFAULTS)
        for key, value in (values or {}).items():
            self.set(key, value)

    @classmethod
    def parse(cls, text):
        config = cls()
        for line_num, line in enumerate(text.splitlines(), 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError('line {}: expected key = value, got {!r}'.format(line_num, line))
            key, value = line.split('=', 1)
            config.set(key.strip(), value)
        return config

    @classmethod
    def from_file(cls, path=None):
        """Defaults when path is None."""
        if path is None:
            return cls()
        if not os.path.exists(path):
            raise FileNotFoundError('config file {} does not exist'.format(path))
        with open(path) as f:
            return cls.parse(f.read())

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError('unknown config key {}'.format(key))
        value = _convert(key, value, DEFAULTS[key])
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError('{} must be one of {}, got {!r}'.format(key, ', '.join(CHOICES[key]), value))
        self.values[key] = value

    def update(self, overrides):
        """Apply flag overrides; None values are ignored."""
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)
        return self

    def __getitem__(self, key):
        if key not in self.values:
            raise ConfigError('unknown config key {}'.format(key))
        return self.values[key]

    def section(self, name):
        """Settings of one section, keyed without the section prefix."""
        prefix = name + '.'
        return OrderedDict((k[len(prefix):], v) for k, v in self.values.items() if k.startswith(prefix))

    def to_text(self):
        return ''.join('{} = {}\n'.format(k, _format(v)) for k, v in self.values.items())

    def write_resolved(self, directory):
        """Write every resolved setting to directory/resolved_config.txt."""
        if directory and not os.path.exists(directory):
            os.makedirs(directory)
        path = os.path.join(directory, RESOLVED_CONFIG_FILE)
        with open(path, 'w') as f:
            f.write(self.to_text())
        return path
