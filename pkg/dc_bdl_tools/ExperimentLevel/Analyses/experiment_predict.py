"""
Monte Carlo dropout inference. T stochastic passes of a trained network over the input days are turned into a
per-pixel predictive distribution (mean, variance, rain probability and matched parameters) in mm/day.
"""
import os
import joblib
import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns
from joblib import Parallel, delayed

from dc_bdl_tools.ExperimentLevel import srcnn
from dc_bdl_tools.ExperimentLevel.experiment_analysis import ExperimentAnalysisBase
from dc_bdl_tools.ExperimentLevel.experiment_synthetic_data import ExperimentSyntheticData
from dc_bdl_tools.ExperimentLevel.par_funcs import par_mc_pass
from dc_bdl_tools.Utils import grid_helpers
from dc_bdl_tools.Utils.errors import ConfigError, ContractError
from dc_bdl_tools.Utils.likelihoods import McPassSet, predictive_distribution, predictive_interval

PASSES_FILE = 'passes.p'


def worker_count(requested=None):
    """
    Worker count for the Monte Carlo passes. DCBDL_THREADS, when set, caps the requested count and is also the
    default when nothing is requested (1 otherwise). Negative requests count back from the cores as in joblib.
    """
    env = os.environ.get('DCBDL_THREADS')
    cap = None
    if env is not None and env.strip():
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError('DCBDL_THREADS must be an integer, got {!r}'.format(env))
        if cap < 1:
            raise ConfigError('DCBDL_THREADS must be at least 1, got {}'.format(cap))
    if requested is None:
        return 1 if cap is None else cap
    if requested == 0:
        raise ContractError('n_jobs must be non-zero')
    if requested < 0:
        requested = max(1, joblib.cpu_count() + 1 + requested)
    return requested if cap is None else min(requested, cap)


def mc_predict(weights, inputs, T=50, seed=0, n_jobs=None, chunk_size=10, precip_scale=None):
    """
    T independent stochastic forward passes with fresh dropout masks.

    Parameters
    ----------
    weights: NetworkWeights
    inputs: numpy.ndarray
        [n_days, channels, H, W] normalized network input.
    T: int
        Number of passes.
    seed: int
        Pass t draws its masks from a generator seeded by (seed, t), so results do not depend on n_jobs.
    n_jobs: int
        Parallel workers, capped by DCBDL_THREADS. See worker_count.
    chunk_size: int
        Days per forward call.
    precip_scale: float
        Scaling of precipitation in the model units. Defaults to the model tag's scaling.

    Returns
    -------
    McPassSet
        [T, n_days, H, W] arrays in model units.
    """
    if T < 1:
        raise ContractError('need at least one Monte Carlo pass, got {}'.format(T))
    inputs = np.asarray(inputs)
    if inputs.ndim != 4:
        raise ContractError('inputs must be [days, channels, H, W], got {}'.format(inputs.shape))
    n_jobs = worker_count(n_jobs)
    model_tag = weights.config.model_tag
    precip_scale = grid_helpers.precip_scale_for(model_tag) if precip_scale is None else precip_scale

    info = [(weights, inputs, seed, t, chunk_size) for t in range(T)]
    if n_jobs == 1:
        outs = [par_mc_pass(x) for x in info]
    else:
        outs = Parallel(n_jobs=n_jobs)(delayed(par_mc_pass)(x) for x in info)

    location = np.stack([o[0] for o in outs])
    s = np.stack([o[1] for o in outs])
    phi = None if model_tag == 'gaussian' else np.stack([o[2] for o in outs])
    return McPassSet(location, s, phi, model_tag, precip_scale)


def predict_distribution(passes, cdf_mode='moment_matched'):
    """Predictive distribution grids of a pass set, in mm/day."""
    return predictive_distribution(passes, cdf_mode)


def write_prediction(out_dir, passes, dist, days, cell_size=4.):
    """
    Write one DCG1 grid sequence per distribution field (E, Var, p, E2 and the matched parameters) under out_dir,
    plus the pass set itself so mixture CDFs can be evaluated later.
    """
    for name, values in dist.fields().items():
        grids = [grid_helpers.Grid(v, cell_size, 'derived') for v in np.asarray(values)]
        grid_helpers.write_grid_sequence(os.path.join(out_dir, name), grids, days)
    joblib.dump({'passes': passes, 'cdf_mode': dist.cdf_mode, 'days': list(days), 'cell_size': cell_size},
                os.path.join(out_dir, PASSES_FILE))


def read_prediction(pred_dir):
    """
    Returns
    -------
    dist: PredictiveDistribution
    passes: McPassSet
    days: list of int
    """
    passes_file = os.path.join(pred_dir, PASSES_FILE)
    if not os.path.exists(passes_file):
        raise ContractError('no {} in {}'.format(PASSES_FILE, pred_dir))
    saved = joblib.load(passes_file)
    dist = predict_distribution(saved['passes'], saved['cdf_mode'])
    return dist, saved['passes'], saved['days']


class ExperimentPredictAnalysis(ExperimentAnalysisBase, ExperimentSyntheticData):
    """
    Runs Monte Carlo dropout inference over the test days. Uses the weights in .res (when run after
    ExperimentTrainAnalysis in a pipeline) or the checkpoint in .checkpoint_file.
    """

    def __init__(self, dataset=None, model='gaussian', seed=0):
        super(ExperimentPredictAnalysis, self).__init__(dataset=dataset, model=model, seed=seed)

        # string to use when saving results files
        self.res_str = 'predict.p'

        # inference settings
        self.n_passes = 50
        self.cdf_mode = 'moment_matched'
        self.n_jobs = None
        self.chunk_size = 10

        # 'test', 'train' or 'all'
        self.predict_days = 'test'

        # weights to use when none are in .res
        self.checkpoint_file = None

        # if set, distribution grids are also written here
        self.pred_dir = None

    def _weights_and_normalizer(self):
        if 'weights' in self.res:
            return self.res['weights'], self.res['normalizer']
        if self.checkpoint_file is None:
            raise ContractError('%s: no trained weights in .res and no .checkpoint_file set' % self.dataset)
        weights, header = srcnn.load_weights(self.checkpoint_file)
        normalizer = grid_helpers.Normalizer.from_dict(header['normalizer']) if 'normalizer' in header else \
            self.normalizer
        return weights, normalizer

    def analysis(self):
        """
        Draws the Monte Carlo passes and summarizes them.
        """
        if self.experiment_data is None:
            print('%s: compute or load data first with .load_data()!' % self.dataset)
            return

        weights, normalizer = self._weights_and_normalizer()
        if weights.config.model_tag != self.model:
            raise ContractError('weights are for {}, experiment is {}'.format(weights.config.model_tag, self.model))

        days = self.days_of(self.predict_days)
        print('%s: %d Monte Carlo passes over %d days.' % (self.dataset, self.n_passes, len(days)))
        passes = mc_predict(weights, self.model_inputs(days, normalizer), T=self.n_passes, seed=self.seed,
                            n_jobs=self.n_jobs, chunk_size=self.chunk_size, precip_scale=normalizer.precip_scale)
        dist = predict_distribution(passes, self.cdf_mode)

        if self.pred_dir is not None:
            write_prediction(self.pred_dir, passes, dist, [int(d) for d in days], self.cell_size)

        self.res['passes'] = passes
        self.res['distribution'] = dist
        self.res['days'] = np.asarray(days)

    def plot_prediction_interval(self, row, col, level=0.9):
        """
        Observed precipitation at one pixel against the predictive expectation and a central interval.
        """
        dist = self.res['distribution']
        passes = self.res['passes']
        days = self.res['days']
        obs = self.observations(days)[:, row, col]
        lower, upper = predictive_interval(dist, level, passes)

        with plt.style.context('fivethirtyeight'):
            fig, ax = plt.subplots(figsize=(12, 4))
            ax.fill_between(days, lower[:, row, col], upper[:, row, col], alpha=.3,
                            label='{:.0f}% interval'.format(level * 100))
            ax.plot(days, dist.mean[:, row, col], lw=2, label='E[Y]')
            ax.scatter(days, obs, c='k', s=10, zorder=3, label='observed')
            ax.set_xlabel('Day', fontsize=16)
            ax.set_ylabel('mm/day', fontsize=16)
            ax.legend()
            sns.despine()
        return fig
