"""
Concrete dropout: a continuous relaxation of Bernoulli dropout masks so the dropout probability of each hidden
layer can be learned by gradient descent, plus the KL regularizer that keeps the learned probabilities honest.

The relaxed mask for noise u ~ U(0, 1) is

    z = 1 - sigmoid((log p - log(1 - p) + log u - log(1 - u)) / temperature)

and gated activations are rescaled by 1 / (1 - p). Since log p - log(1 - p) is just the p logit, the layer keeps its
probability as an unconstrained logit and never takes the log of p directly.
"""
import numpy as np
from scipy.special import expit

from dc_bdl_tools.Utils import autodiff as ad
from dc_bdl_tools.Utils.errors import DomainError

# noise is drawn from [NOISE_EPS, 1 - NOISE_EPS] so the logistic transform stays finite
NOISE_EPS = 1e-7

# relaxed masks stay inside [MASK_EPS, 1 - MASK_EPS] in every precision
MASK_EPS = 1e-6


class DropoutLayerState(object):
    """
    Dropout parameters of one hidden layer.

    Parameters
    ----------
    p_logit: float or Tensor
        Unconstrained logit of the dropout probability. A Tensor when the logit is being trained.
    width: int
        Number of kernels K in the layer whose output is gated.
    temperature: float
        Temperature of the concrete relaxation. Fixed during training.
    """

    def __init__(self, p_logit, width, temperature=0.1):
        if width <= 0:
            raise DomainError('layer width must be positive, got {}'.format(width))
        if temperature <= 0:
            raise DomainError('temperature must be positive, got {}'.format(temperature))
        self.p_logit = p_logit
        self.width = int(width)
        self.temperature = temperature

    @classmethod
    def from_probability(cls, p, width, temperature=0.1):
        if not 0 < p < 1:
            raise DomainError('dropout probability must be in (0, 1), got {}'.format(p))
        return cls(float(np.log(p) - np.log1p(-p)), width, temperature)

    @property
    def p(self):
        z = self.p_logit.item() if isinstance(self.p_logit, ad.Tensor) else self.p_logit
        return float(expit(z))


class RegularizerConfig(object):
    """
    Constants of the KL regularizer.

    Parameters
    ----------
    length_scale: float
        Prior length scale l.
    tau: float
        Model precision tau.
    dataset_size: int
        N, the number of regression targets (days x height x width).
    """

    def __init__(self, length_scale=1., tau=1e-5, dataset_size=1):
        for name, val in [('length_scale', length_scale), ('tau', tau), ('dataset_size', dataset_size)]:
            if not val > 0:
                raise DomainError('{} must be strictly positive, got {}'.format(name, val))
        self.length_scale = length_scale
        self.tau = tau
        self.dataset_size = dataset_size


def draw_uniform_noise(rng, shape):
    """Uniform noise for concrete masks, kept away from 0 and 1."""
    return np.clip(rng.uniform(NOISE_EPS, 1. - NOISE_EPS, size=shape), NOISE_EPS, 1. - NOISE_EPS)


def concrete_mask(state, u):
    """
    Relaxed keep-mask in (0, 1).

    Parameters
    ----------
    state: DropoutLayerState
    u: array
        Uniform noise strictly inside (0, 1), shaped like (or broadcastable to) the gated activations.

    Returns
    -------
    Tensor
        The mask, differentiable with respect to state.p_logit, clamped to [MASK_EPS, 1 - MASK_EPS].
    """
    # the noise logit is formed in double precision; u close to 1 would round to 1 in float32
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u >= 1):
        raise DomainError('concrete dropout noise must lie strictly inside (0, 1)')
    noise_logit = np.log(u) - np.log1p(-u)
    drop_logit = ad.add(state.p_logit, noise_logit)
    mask = 1. - ad.sigmoid(ad.mul(drop_logit, 1. / state.temperature))
    return ad.clip(mask, MASK_EPS, 1. - MASK_EPS)


def apply_concrete_dropout(x, state, u=None):
    """
    Gate activations x with a concrete mask and rescale by 1 / (1 - p). Without noise the mask is replaced by its
    expectation, which after rescaling leaves x unchanged.
    """
    if u is None:
        return ad.as_tensor(x)
    keep_prob = ad.sigmoid(ad.neg(state.p_logit))
    return ad.div(ad.mul(x, concrete_mask(state, u)), keep_prob)


def entropy(p):
    """
    Entropy of a Bernoulli(p) variable, with the limit value 0 at both endpoints.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError('entropy needs p in [0, 1]')
    with np.errstate(divide='ignore', invalid='ignore'):
        h = -p * np.log(p) - (1 - p) * np.log1p(-p)
    h = np.where((p == 0) | (p == 1), 0., h)
    return float(h) if h.ndim == 0 else h


def entropy_from_logit(p_logit):
    """Bernoulli entropy as a differentiable function of the logit."""
    p = ad.sigmoid(p_logit)
    return ad.neg(ad.add(ad.mul(p, ad.log_sigmoid(p_logit)),
                         ad.mul(1. - p, ad.log_sigmoid(ad.neg(p_logit)))))


def kl_regularizer(weights, states, config):
    """
    KL term of the variational objective, already divided by the dataset size:

        sum_l  l^2 (1 - p_l) / (2 N tau) * ||M_l||^2  -  K_l H(p_l) / (N tau)

    Parameters
    ----------
    weights: list
        Kernel M_l consuming the output of each gated layer (arrays or Tensors). Biases are not included.
    states: list of DropoutLayerState
        One per entry of weights.
    config: RegularizerConfig

    Returns
    -------
    Tensor
        Scalar regularizer.
    """
    if len(weights) != len(states):
        raise DomainError('need one dropout state per regularized layer ({} vs {})'.format(len(weights),
                                                                                          len(states)))
    n_tau = config.dataset_size * config.tau
    weight_coef = config.length_scale ** 2 / (2. * n_tau)

    total = ad.as_tensor(0.)
    for kernel, state in zip(weights, states):
        keep_prob = ad.sigmoid(ad.neg(state.p_logit))
        weight_term = ad.mul(weight_coef, ad.mul(keep_prob, ad.sum_all(ad.square(kernel))))
        entropy_term = ad.mul(state.width / n_tau, entropy_from_logit(state.p_logit))
        total = ad.add(total, ad.sub(weight_term, entropy_term))
    return total
