"""
Bias-corrected Adam. Parameters, gradients and both moment accumulators are dictionaries keyed by parameter name.
The update is functional: new parameter arrays and a new AdamState are returned and the inputs are left alone.
"""
from collections import OrderedDict

import numpy as np

from dc_bdl_tools.Utils.errors import ContractError, NonFiniteError


class AdamState(object):
    """
    Moment accumulators and step counter for Adam.

    Parameters
    ----------
    params: dict
        name -> array. Only the shapes are used; the accumulators start at zero.
    beta1: float
        Decay of the first moment.
    beta2: float
        Decay of the second moment.
    epsilon: float
        Added to the denominator.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def copy(self):
        new = AdamState({}, self.beta1, self.beta2, self.epsilon)
        new.m = OrderedDict((k, v.copy()) for k, v in self.m.items())
        new.v = OrderedDict((k, v.copy()) for k, v in self.v.items())
        new.step = self.step
        return new


def adam_step(params, grads, state, learning_rate):
    """
    One Adam update.

    Parameters
    ----------
    params: dict
        name -> array
    grads: dict
        name -> gradient array, same keys and shapes as params
    state: AdamState
    learning_rate: float

    Returns
    -------
    new_params: OrderedDict
    new_state: AdamState
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError('params, grads and Adam state must have the same keys')
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]) or np.shape(params[k]) != state.m[k].shape:
            raise ContractError('shape mismatch for parameter {}'.format(k))
        if not np.all(np.isfinite(grads[k])):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(grads[k])))[0]
            raise NonFiniteError('gradient of ' + k, tuple(bad))

    new_state = state.copy()
    new_state.step = state.step + 1
    t = new_state.step
    bc1 = 1. - state.beta1 ** t
    bc2 = 1. - state.beta2 ** t

    new_params = OrderedDict()
    for k, p in params.items():
        g = grads[k]
        new_state.m[k] = state.beta1 * state.m[k] + (1. - state.beta1) * g
        new_state.v[k] = state.beta2 * state.v[k] + (1. - state.beta2) * (g * g)
        m_hat = new_state.m[k] / bc1
        v_hat = new_state.v[k] / bc2
        new_params[k] = (p - learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(np.asarray(p).dtype)
    return new_params, new_state
