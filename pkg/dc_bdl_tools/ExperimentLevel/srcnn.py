"""
Residual super-resolution network with likelihood heads.

Three same-padding convolutions (kernel sizes 9, 3, 5 by default). The two hidden layers use ReLU followed by
concrete dropout. The output has one channel per head parameter: location, log variance and, for the hurdle models,
the rain logit. The precipitation input channel is added to the location channel only (the skip connection).
"""
from collections import OrderedDict

import numpy as np

from dc_bdl_tools.Utils import autodiff as ad
from dc_bdl_tools.Utils.checkpoint import load_checkpoint, save_checkpoint
from dc_bdl_tools.Utils.concrete_dropout import DropoutLayerState, apply_concrete_dropout, draw_uniform_noise
from dc_bdl_tools.Utils.errors import ContractError
from dc_bdl_tools.Utils.likelihoods import HeadOutput, check_model_tag


class NetworkConfig(object):
    """
    Architecture of the network.

    Parameters
    ----------
    kernel_sizes: list of int
        Odd kernel extent of every layer, one more entry than filters.
    filters: list of int
        Width of each hidden layer. The full-size network uses [512, 512].
    model_tag: str
        'gaussian', 'dc_gaussian' or 'dc_lognormal'
    input_channels: int
        Low resolution precipitation plus high resolution elevation.
    temperature: float
        Concrete dropout temperature.
    init_p: float
        Dropout probability the hidden layers start at.
    """

    def __init__(self, kernel_sizes=(9, 3, 5), filters=(64, 64), model_tag='gaussian', input_channels=2,
                 temperature=0.1, init_p=0.1):
        self.kernel_sizes = [int(k) for k in kernel_sizes]
        self.filters = [int(f) for f in filters]
        self.model_tag = check_model_tag(model_tag)
        self.input_channels = int(input_channels)
        self.temperature = temperature
        self.init_p = init_p
        if len(self.kernel_sizes) != len(self.filters) + 1:
            raise ContractError('need one more kernel size than hidden layers ({} vs {})'.format(
                len(self.kernel_sizes), len(self.filters)))
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ContractError('kernel sizes must be odd and positive, got {}'.format(self.kernel_sizes))
        if any(f < 1 for f in self.filters):
            raise ContractError('filters must be positive, got {}'.format(self.filters))

    @property
    def output_channels(self):
        return 2 if self.model_tag == 'gaussian' else 3

    @property
    def n_layers(self):
        return len(self.kernel_sizes)

    def kernel_shapes(self):
        channels = [self.input_channels] + self.filters + [self.output_channels]
        return [(channels[i + 1], channels[i], k, k) for i, k in enumerate(self.kernel_sizes)]

    def to_dict(self):
        return {'kernel_sizes': self.kernel_sizes, 'filters': self.filters, 'model_tag': self.model_tag,
                'input_channels': self.input_channels, 'temperature': self.temperature, 'init_p': self.init_p}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class NetworkWeights(object):
    """
    Kernels, biases and per-hidden-layer dropout logits.

    Attributes
    ----------
    config: NetworkConfig
    kernels, biases: lists of arrays
    p_logits: list of float
    """

    def __init__(self, config, kernels, biases, p_logits):
        self.config = config
        self.kernels = [np.asarray(k) for k in kernels]
        self.biases = [np.asarray(b) for b in biases]
        self.p_logits = [float(p) for p in p_logits]
        self._check()

    def _check(self):
        shapes = self.config.kernel_shapes()
        if len(self.kernels) != len(shapes) or len(self.biases) != len(shapes):
            raise ContractError('expected {} layers of weights'.format(len(shapes)))
        for i, (k, b, shape) in enumerate(zip(self.kernels, self.biases, shapes)):
            if k.shape != shape or b.shape != (shape[0],):
                raise ContractError('layer {} weights {} / {} do not match config {}'.format(i + 1, k.shape,
                                                                                          b.shape, shape))
        if len(self.p_logits) != len(self.config.filters):
            raise ContractError('expected one dropout logit per hidden layer')

    def dropout_states(self, p_logits=None):
        p_logits = self.p_logits if p_logits is None else p_logits
        return [DropoutLayerState(z, width, self.config.temperature) for z, width in zip(p_logits,
                                                                                         self.config.filters)]

    @property
    def dropout_probs(self):
        return [s.p for s in self.dropout_states()]

    def parameters(self):
        """name -> array, in a fixed order: conv kernels and biases, then dropout logits."""
        params = OrderedDict()
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            params['conv{}.kernel'.format(i + 1)] = k
            params['conv{}.bias'.format(i + 1)] = b
        for i, z in enumerate(self.p_logits):
            params['dropout{}.p_logit'.format(i + 1)] = np.asarray(z, dtype=self.kernels[0].dtype)
        return params

    @classmethod
    def from_parameters(cls, config, params):
        n = config.n_layers
        kernels = [params['conv{}.kernel'.format(i + 1)] for i in range(n)]
        biases = [params['conv{}.bias'.format(i + 1)] for i in range(n)]
        p_logits = [float(np.asarray(params['dropout{}.p_logit'.format(i + 1)])) for i in range(n - 1)]
        return cls(config, kernels, biases, p_logits)

    def with_dropout_probs(self, probs):
        """Copy with the hidden-layer dropout probabilities replaced (probabilities of 0 become a -50 logit)."""
        logits = [-50. if p == 0 else float(np.log(p) - np.log1p(-p)) for p in probs]
        return NetworkWeights(self.config, self.kernels, self.biases, logits)

    def copy(self):
        return NetworkWeights(self.config, [k.copy() for k in self.kernels], [b.copy() for b in self.biases],
                              list(self.p_logits))


def init_weights(config, rng):
    """
    Centered uniform initialization with scale 1 / sqrt(fan_in) for kernels and biases; dropout logits start at
    config.init_p.
    """
    dtype = ad.get_dtype()
    kernels = []
    biases = []
    for shape in config.kernel_shapes():
        bound = 1. / np.sqrt(shape[1] * shape[2] * shape[3])
        kernels.append(rng.uniform(-bound, bound, size=shape).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=shape[0]).astype(dtype))
    p_logit = float(np.log(config.init_p) - np.log1p(-config.init_p))
    return NetworkWeights(config, kernels, biases, [p_logit] * len(config.filters))


def forward(x, weights, noise=None, tensors=None):
    """
    Run the network.

    Parameters
    ----------
    x: array or Tensor
        [batch, 2, H, W]; channel 0 is normalized low resolution precipitation, channel 1 normalized elevation.
    weights: NetworkWeights
    noise: numpy.random.Generator or None
        Source of the concrete dropout noise. One mask per hidden layer, shared across the batch. Without noise the
        masks are replaced by their expectation and the pass is deterministic.
    tensors: dict, optional
        name -> Tensor, as returned by weights_on_tape, to differentiate with respect to the weights.

    Returns
    -------
    HeadOutput
        Tensors of shape [batch, 1, H, W].
    """
    config = weights.config
    x = ad.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != config.input_channels:
        raise ContractError('network input must be [batch, {}, H, W], got {}'.format(config.input_channels,
                                                                                     x.shape))
    params = weights.parameters() if tensors is None else tensors
    p_logits = [params['dropout{}.p_logit'.format(i + 1)] for i in range(config.n_layers - 1)]
    states = weights.dropout_states(p_logits)

    h = x
    for layer in range(config.n_layers):
        h = ad.conv2d(h, params['conv{}.kernel'.format(layer + 1)], params['conv{}.bias'.format(layer + 1)])
        if layer < config.n_layers - 1:
            h = ad.relu(h)
            u = None if noise is None else draw_uniform_noise(noise, (1,) + h.shape[1:])
            h = apply_concrete_dropout(h, states[layer], u)

    location = ad.add(ad.slice_channels(h, 0, 1), ad.slice_channels(x, 0, 1))
    s = ad.slice_channels(h, 1, 2)
    phi = ad.slice_channels(h, 2, 3) if config.model_tag != 'gaussian' else None
    return HeadOutput(location, s, phi, config.model_tag)


def weights_on_tape(weights, tape):
    """Register every parameter as a leaf of tape; returns name -> Tensor."""
    return OrderedDict((name, tape.leaf(value, name)) for name, value in weights.parameters().items())


def regularized_kernels(tensors, config):
    """Kernels consuming each gated hidden layer, in the order of weights.dropout_states()."""
    return [tensors['conv{}.kernel'.format(i + 2)] for i in range(config.n_layers - 1)]


def save_weights(path, weights, header=None):
    """
    Checkpoint the weights. The network config is stored in the header under 'network' next to anything in header
    (normalization constants, the training seed).
    """
    header = dict(header or {})
    header['network'] = weights.config.to_dict()
    save_checkpoint(path, weights.parameters(), header)


def load_weights(path):
    """
    Returns
    -------
    weights: NetworkWeights
    header: dict
    """
    header, tensors = load_checkpoint(path)
    if 'network' not in header:
        raise ContractError('{} has no network description in its header'.format(path))
    config = NetworkConfig.from_dict(header['network'])
    return NetworkWeights.from_parameters(config, tensors), header
