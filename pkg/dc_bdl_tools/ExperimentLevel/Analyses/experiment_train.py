"""
Trains a residual SRCNN with concrete dropout by minimizing the likelihood loss of its model tag plus the scaled KL
regularizer. The final weights are written as a binary checkpoint and the training log as a DataFrame.
"""
import os
import time
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns
from tqdm import tqdm

from dc_bdl_tools.ExperimentLevel import srcnn
from dc_bdl_tools.ExperimentLevel.experiment_analysis import ExperimentAnalysisBase
from dc_bdl_tools.ExperimentLevel.experiment_synthetic_data import ExperimentSyntheticData
from dc_bdl_tools.Utils import autodiff as ad
from dc_bdl_tools.Utils.adam import AdamState, adam_step
from dc_bdl_tools.Utils.concrete_dropout import RegularizerConfig, kl_regularizer
from dc_bdl_tools.Utils.errors import ContractError, DomainError, NonFiniteError, TrainingDivergedError
from dc_bdl_tools.Utils.grid_helpers import precip_scale_for
from dc_bdl_tools.Utils.likelihoods import RAIN_THRESHOLD, check_model_tag, is_wet, nll


class TrainingConfig(object):
    """
    Optimization settings.

    Parameters
    ----------
    learning_rate: float
    batch_size: int
        Patches per iteration (M).
    iterations: int
        Desk-scale default; the full-size protocol runs 3e6.
    tau: float
        Model precision of the KL regularizer.
    length_scale: float
        Prior length scale of the KL regularizer.
    seed: int
        Seeds initialization, batch sampling and dropout noise, each from its own stream.
    model_tag: str
    dataset_size: int
        N = days x height x width.
    log_every: int
        Iterations between training log records.
    rain_threshold: float
        mm/day, applied to raw precipitation.
    """

    def __init__(self, learning_rate=1e-4, batch_size=10, iterations=10000, tau=1e-5, length_scale=1., seed=0,
                 model_tag='gaussian', dataset_size=1, log_every=100, rain_threshold=RAIN_THRESHOLD):
        for name, val in [('learning_rate', learning_rate), ('batch_size', batch_size), ('tau', tau),
                          ('length_scale', length_scale), ('dataset_size', dataset_size), ('log_every', log_every)]:
            if not val > 0:
                raise DomainError('{} must be positive, got {}'.format(name, val))
        if iterations < 0:
            raise DomainError('iterations must be non-negative, got {}'.format(iterations))
        self.learning_rate = learning_rate
        self.batch_size = int(batch_size)
        self.iterations = int(iterations)
        self.tau = tau
        self.length_scale = length_scale
        self.seed = seed
        self.model_tag = check_model_tag(model_tag)
        self.dataset_size = int(dataset_size)
        self.log_every = int(log_every)
        self.rain_threshold = rain_threshold

    @property
    def precip_scale(self):
        return precip_scale_for(self.model_tag)

    def regularizer(self):
        return RegularizerConfig(self.length_scale, self.tau, self.dataset_size)


def _log_record(iteration, nll_val, kl_val, weights, seconds):
    rec = {'iteration': iteration, 'nll': nll_val, 'kl': kl_val}
    for i, p in enumerate(weights.dropout_probs):
        rec['p_layer{}'.format(i + 1)] = p
    rec['seconds'] = seconds
    return rec


def training_step(weights, x, y_mm, config, noise):
    """
    Loss and gradients of one batch.

    Parameters
    ----------
    weights: NetworkWeights
    x: array
        [M, channels, H, W] network input.
    y_mm: array
        [M, 1, H, W] targets in mm.
    config: TrainingConfig
    noise: numpy.random.Generator
        Source of the dropout masks, one per hidden layer.

    Returns
    -------
    nll, kl: float
    grads: OrderedDict
    """
    tape = ad.ComputationTape()
    tensors = srcnn.weights_on_tape(weights, tape)
    head = srcnn.forward(x, weights, noise=noise, tensors=tensors)

    wet = is_wet(y_mm, config.rain_threshold)
    nll_term = nll(y_mm * config.precip_scale, head, config.rain_threshold, wet=wet)

    n_hidden = weights.config.n_layers - 1
    states = weights.dropout_states([tensors['dropout{}.p_logit'.format(i + 1)] for i in range(n_hidden)])
    kl_term = kl_regularizer(srcnn.regularized_kernels(tensors, weights.config), states, config.regularizer())

    grads = ad.backward(ad.add(nll_term, kl_term))
    return nll_term.item(), kl_term.item(), grads


def train(config, patches, network_config=None, weights=None, checkpoint_file=None, header=None, progress=True):
    """
    Minimize likelihood loss + KL with Adam.

    Parameters
    ----------
    config: TrainingConfig
    patches: PatchSet
        Normalized inputs and labels in mm.
    network_config: NetworkConfig
        Architecture. Defaults to the standard network for config.model_tag.
    weights: NetworkWeights, optional
        Starting weights. Initialized from the seed if not given.
    checkpoint_file: str, optional
        Where the final weights are written. On divergence the last good weights are written here instead.
    header: dict, optional
        Extra checkpoint header entries.
    progress: bool
        Show a tqdm progress bar.

    Returns
    -------
    weights: NetworkWeights
    log: pandas.DataFrame
        Columns iteration, nll, kl, p_layer1.., seconds.
    """
    if len(patches) == 0:
        raise ContractError('cannot train on an empty patch set')
    if network_config is None:
        network_config = srcnn.NetworkConfig(model_tag=config.model_tag)
    if network_config.model_tag != config.model_tag:
        raise ContractError('network is built for {} but training uses {}'.format(network_config.model_tag,
                                                                                  config.model_tag))
    if patches.inputs.shape[1] != network_config.input_channels:
        raise ContractError('patches have {} channels, network expects {}'.format(patches.inputs.shape[1],
                                                                                 network_config.input_channels))

    init_seq, batch_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(3)
    if weights is None:
        weights = srcnn.init_weights(network_config, np.random.default_rng(init_seq))
    batch_rng = np.random.default_rng(batch_seq)
    noise_rng = np.random.Generator(np.random.Philox(noise_seq))

    header = dict(header or {})
    header.update({'model_tag': config.model_tag, 'seed': config.seed})

    state = AdamState(weights.parameters())
    inputs = patches.inputs.astype(ad.get_dtype(), copy=False)
    labels = patches.labels
    n_patches = len(patches)
    records = []
    start = time.perf_counter()

    for iteration in tqdm(range(1, config.iterations + 1), disable=not progress, desc='training'):
        idx = batch_rng.choice(n_patches, size=config.batch_size, replace=n_patches < config.batch_size)
        try:
            nll_val, kl_val, grads = training_step(weights, inputs[idx], labels[idx], config, noise_rng)
            if not (np.isfinite(nll_val) and np.isfinite(kl_val)):
                raise NonFiniteError('loss')
            params, state = adam_step(weights.parameters(), grads, state, config.learning_rate)
        except NonFiniteError as e:
            if checkpoint_file is not None:
                srcnn.save_weights(checkpoint_file, weights, dict(header, diverged_at=iteration))
            raise TrainingDivergedError(iteration, last_good=weights, checkpoint_file=checkpoint_file) from e

        weights = srcnn.NetworkWeights.from_parameters(network_config, params)
        if iteration % config.log_every == 0 or iteration == config.iterations:
            records.append(_log_record(iteration, nll_val, kl_val, weights, time.perf_counter() - start))

    if checkpoint_file is not None:
        srcnn.save_weights(checkpoint_file, weights, header)

    columns = ['iteration', 'nll', 'kl'] + ['p_layer{}'.format(i + 1) for i in range(len(network_config.filters))]
    log = pd.DataFrame.from_records(records, columns=columns + ['seconds'])
    return weights, log


class ExperimentTrainAnalysis(ExperimentAnalysisBase, ExperimentSyntheticData):
    """
    Trains the network of the experiment's model tag on patches from the training days. Results hold the trained
    weights, the training log, the normalization constants and the checkpoint path.
    """

    def __init__(self, dataset=None, model='gaussian', seed=0):
        super(ExperimentTrainAnalysis, self).__init__(dataset=dataset, model=model, seed=seed)

        # string to use when saving results files
        self.res_str = 'train.p'

        # network settings
        self.kernel_sizes = [9, 3, 5]
        self.filters = [64, 64]
        self.temperature = 0.1
        self.init_p = 0.1

        # optimization settings
        self.learning_rate = 1e-4
        self.batch_size = 10
        self.iterations = 10000
        self.tau = 1e-5
        self.length_scale = 1.
        self.log_every = 100

        # where to write weights. Defaults to a file in the results directory.
        self.checkpoint_file = None
        self.progress = True

    def network_config(self):
        return srcnn.NetworkConfig(self.kernel_sizes, self.filters, self.model, temperature=self.temperature,
                                   init_p=self.init_p)

    def training_config(self):
        return TrainingConfig(self.learning_rate, self.batch_size, self.iterations, self.tau, self.length_scale,
                              self.seed, self.model, self.dataset_size(), self.log_every)

    def analysis(self):
        """
        Extracts training patches, trains and checkpoints.
        """
        if self.experiment_data is None:
            print('%s: compute or load data first with .load_data()!' % self.dataset)
            return

        normalizer = self.normalizer
        patches = self.patch_set(normalizer=normalizer)
        checkpoint_file = self.checkpoint_file
        if checkpoint_file is None:
            checkpoint_file = os.path.join(self.res_save_dir, '{}_{}_weights.dcbw'.format(self.model, self.seed))

        print('%s: training %s on %d patches for %d iterations.' % (self.dataset, self.model, len(patches),
                                                                   self.iterations))
        weights, log = train(self.training_config(), patches, self.network_config(), checkpoint_file=checkpoint_file,
                             header={'normalizer': normalizer.to_dict()}, progress=self.progress)

        self.res['weights'] = weights
        self.res['training_log'] = log
        self.res['normalizer'] = normalizer
        self.res['checkpoint_file'] = checkpoint_file

    def plot_dropout_probs(self):
        """
        Learned dropout probability of each hidden layer against iteration.
        """
        log = self.res['training_log']
        p_cols = [c for c in log.columns if c.startswith('p_layer')]
        with plt.style.context('fivethirtyeight'):
            fig, ax = plt.subplots()
            for col in p_cols:
                ax.plot(log['iteration'], log[col], lw=2, label='layer {}'.format(col[len('p_layer'):]))
            ax.set_xlabel('Iteration', fontsize=16)
            ax.set_ylabel('Dropout probability', fontsize=16)
            ax.legend()
            sns.despine()
        return fig

    def plot_loss(self):
        log = self.res['training_log']
        fig, axs = plt.subplots(1, 2, figsize=(12, 4))
        axs[0].plot(log['iteration'], log['nll'], lw=2)
        axs[0].set_ylabel('NLL')
        axs[1].plot(log['iteration'], log['kl'], lw=2, c='k')
        axs[1].set_ylabel('KL / N')
        for ax in axs:
            ax.set_xlabel('Iteration')
        sns.despine(fig)
        return fig
