"""
Probabilistic evaluation of a prediction against high resolution observations: accuracy and Climdex errors per
pixel, full predictive NLL, rain classification precision-recall, interval calibration and coverage of central
predictive intervals.
"""
import os
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from dc_bdl_tools.ExperimentLevel.Analyses.experiment_predict import read_prediction
from dc_bdl_tools.ExperimentLevel.experiment_analysis import ExperimentAnalysisBase
from dc_bdl_tools.ExperimentLevel.experiment_synthetic_data import ExperimentSyntheticData
from dc_bdl_tools.Utils import grid_helpers
from dc_bdl_tools.Utils import metric_helpers
from dc_bdl_tools.Utils.errors import ContractError
from dc_bdl_tools.Utils.likelihoods import DC_MODELS, full_nll, is_wet, predictive_interval

INTERVAL_LEVELS = (0.5, 0.8, 0.9)

# value written to per-pixel maps where a metric is undefined
MISSING_VALUE = -1.


def evaluate(dist, passes, obs, days, n_bins=100, wet_only=True, days_per_year=365, aggregate='pixels',
             interval_levels=INTERVAL_LEVELS, seed=0):
    """
    Every evaluation metric of one prediction.

    Parameters
    ----------
    dist: PredictiveDistribution
        [days, rows, cols]
    passes: McPassSet
        The passes dist was computed from.
    obs: array
        [days, rows, cols] observed precipitation in mm.
    days: array
        Day index of each slice, used for the year grouping.
    n_bins: int
        Calibration bins K.
    wet_only: bool
        Restrict calibration to wet observations.
    days_per_year: int
    aggregate: str
        'pixels' or 'days', see MetricsTable.
    interval_levels: list of float
    seed: int
        Seeds the randomized PIT of dry observations.

    Returns
    -------
    dict
    """
    obs = np.asarray(obs, dtype=float)
    if obs.shape != dist.shape:
        raise ContractError('observations {} do not match prediction {}'.format(obs.shape, dist.shape))
    years = metric_helpers.year_labels(days, days_per_year)

    res = {}
    res['metrics'] = metric_helpers.MetricsTable(dist.mean, obs, years, aggregate)
    res['full_nll'] = full_nll(passes, obs)

    pit = metric_helpers.pit_values(obs, dist, passes, rng=np.random.default_rng(seed))
    res['pit'] = pit
    res['calibration'] = metric_helpers.calibration(obs, pit, n_bins, wet_only)
    res['rmse_cal_map'], res['calibration_band'] = metric_helpers.calibration_by_pixel(obs, pit, n_bins, wet_only)

    if dist.model_tag in DC_MODELS:
        wet = is_wet(obs)
        res['precision_recall'] = metric_helpers.precision_recall(dist.rain_prob, wet)
        res['average_precision'] = metric_helpers.average_precision(dist.rain_prob, wet)
    else:
        res['precision_recall'] = None
        res['average_precision'] = np.nan

    coverage = []
    for level in interval_levels:
        lower, upper = predictive_interval(dist, level, passes)
        coverage.append({'level': level, 'observed': metric_helpers.interval_coverage(obs, lower, upper)})
    res['interval_coverage'] = pd.DataFrame(coverage, columns=['level', 'observed'])

    if dist.aleatoric is not None:
        res['aleatoric'] = float(np.mean(dist.aleatoric))
        res['epistemic'] = float(np.mean(dist.epistemic))
    return res


def summary_frame(res, model_tag):
    """One-row table of the scalar results."""
    metrics = res['metrics']
    return pd.DataFrame([{'model': model_tag, 'rmse': metrics.value('rmse'), 'bias': metrics.value('bias'),
                          'r20_error': metrics.value('r20_error'), 'sdii_error': metrics.value('sdii_error'),
                          'full_nll': res['full_nll'], 'rmse_cal': res['calibration'].rmse_cal,
                          'calibration_population': res['calibration'].population,
                          'average_precision': res['average_precision']}])


def _map_grid(values, cell_size):
    values = np.asarray(values, dtype=float)
    return grid_helpers.Grid(np.where(np.isfinite(values), values, MISSING_VALUE), cell_size, 'derived')


def write_evaluation(out_dir, res, model_tag, cell_size=4.):
    """
    Write the evaluation tables as CSV and the per-pixel maps as DCG1 grids under out_dir/maps.
    """
    if not os.path.exists(os.path.join(out_dir, 'maps')):
        os.makedirs(os.path.join(out_dir, 'maps'))
    write = metric_helpers.write_table
    write(summary_frame(res, model_tag), os.path.join(out_dir, 'summary.csv'))
    write(res['metrics'].aggregate, os.path.join(out_dir, 'metrics.csv'))
    write(res['metrics'].per_pixel, os.path.join(out_dir, 'metrics_by_pixel.csv'))
    write(res['calibration'].to_frame(), os.path.join(out_dir, 'calibration.csv'))
    write(res['calibration_band'], os.path.join(out_dir, 'calibration_band.csv'))
    write(res['interval_coverage'], os.path.join(out_dir, 'interval_coverage.csv'))
    if res['precision_recall'] is not None:
        write(res['precision_recall'], os.path.join(out_dir, 'precision_recall.csv'))

    for name in ('bias', 'rmse'):
        grid_helpers.write_grid(os.path.join(out_dir, 'maps', name + '.dcg'),
                                _map_grid(res['metrics'].map(name), cell_size))
    grid_helpers.write_grid(os.path.join(out_dir, 'maps', 'rmse_cal.dcg'), _map_grid(res['rmse_cal_map'], cell_size))


class ExperimentEvaluateAnalysis(ExperimentAnalysisBase, ExperimentSyntheticData):
    """
    Evaluates the predictive distribution in .res (when run after ExperimentPredictAnalysis in a pipeline) or the
    prediction stored in .pred_dir against the experiment's high resolution observations.
    """

    def __init__(self, dataset=None, model='gaussian', seed=0):
        super(ExperimentEvaluateAnalysis, self).__init__(dataset=dataset, model=model, seed=seed)

        # string to use when saving results files
        self.res_str = 'evaluate.p'

        # calibration settings
        self.n_bins = 100
        self.wet_only = True

        # 'pixels' or 'days'
        self.aggregate = 'pixels'
        self.interval_levels = list(INTERVAL_LEVELS)

        # read the prediction from here when .res holds none
        self.pred_dir = None

        # if set, tables and maps are also written here
        self.eval_dir = None

    def analysis(self):
        """
        Computes all metrics for the predicted days.
        """
        if self.experiment_data is None:
            print('%s: compute or load data first with .load_data()!' % self.dataset)
            return

        if 'distribution' in self.res:
            dist, passes, days = self.res['distribution'], self.res['passes'], self.res['days']
        elif self.pred_dir is not None:
            dist, passes, days = read_prediction(self.pred_dir)
        else:
            raise ContractError('%s: no prediction in .res and no .pred_dir set' % self.dataset)

        res = evaluate(dist, passes, self.observations(days), days, self.n_bins, self.wet_only,
                       self.days_per_year, self.aggregate, self.interval_levels, self.seed)
        print('%s: %s test RMSE %.3f, bias %.3f, full NLL %.3f, RMSE_cal %.4f' % (
            self.dataset, self.model, res['metrics'].value('rmse'), res['metrics'].value('bias'), res['full_nll'],
            res['calibration'].rmse_cal))

        if self.eval_dir is not None:
            write_evaluation(self.eval_dir, res, self.model, self.cell_size)
        self.res.update(res)
        self.res['summary'] = summary_frame(res, self.model)

    def plot_calibration(self, ax=None):
        """
        Calibration curve c(z) with the per-pixel band and the ideal diagonal.
        """
        report = self.res['calibration']
        band = self.res['calibration_band']
        if ax is None:
            fig, ax = plt.subplots(figsize=(5, 5))
        else:
            fig = ax.get_figure()
        ax.fill_between(band['z'], band['c_low'], band['c_high'], alpha=.25, label='pixels 10-90%')
        ax.plot(report.z, report.c_values, lw=2, label='{} ({:.3f})'.format(self.model, report.rmse_cal))
        ax.plot([0, 1], [0, 1], '--k', lw=1)
        ax.set_xlabel('Predicted probability z', fontsize=14)
        ax.set_ylabel('Observed frequency c(z)', fontsize=14)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.legend()
        sns.despine(fig)
        return fig

    def plot_precision_recall(self, ax=None):
        pr = self.res['precision_recall']
        if pr is None:
            print('%s: %s has no rain probability to classify with.' % (self.dataset, self.model))
            return
        if ax is None:
            fig, ax = plt.subplots(figsize=(5, 5))
        else:
            fig = ax.get_figure()
        ax.step(pr['recall'], pr['precision'], where='post', lw=2,
                label='{} (AP {:.3f})'.format(self.model, self.res['average_precision']))
        ax.set_xlabel('Recall', fontsize=14)
        ax.set_ylabel('Precision', fontsize=14)
        ax.legend()
        sns.despine(fig)
        return fig
