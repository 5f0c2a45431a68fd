"""
Functions that are performed many times and are therefore suitable for parallelization. Functions should accept only
one input.
"""
import numpy as np

from dc_bdl_tools.ExperimentLevel import srcnn


def pass_rng(seed, pass_index):
    """Counter-based generator of one Monte Carlo pass, derived from the run seed and the pass index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(pass_index)])))


def par_mc_pass(info):
    """
    One stochastic forward pass over every input day.

    Parameters
    ----------
    info: tuple
        (weights, inputs, seed, pass_index, chunk_size). weights is a NetworkWeights, inputs is a
        [n_days, channels, H, W] array. The same dropout masks are used for every chunk of days.

    Returns
    -------
    location, s, phi: numpy.ndarray
        [n_days, H, W] each; phi is None for the plain Gaussian.
    """
    weights, inputs, seed, pass_index, chunk_size = info

    locs, ss, phis = [], [], []
    for start in range(0, inputs.shape[0], chunk_size):
        # a fresh generator per chunk reproduces the pass's masks exactly
        head = srcnn.forward(inputs[start:start + chunk_size], weights, noise=pass_rng(seed, pass_index))
        locs.append(head.location.numpy()[:, 0])
        ss.append(head.s.numpy()[:, 0])
        if head.phi is not None:
            phis.append(head.phi.numpy()[:, 0])

    phi = np.concatenate(phis) if phis else None
    return np.concatenate(locs), np.concatenate(ss), phi
