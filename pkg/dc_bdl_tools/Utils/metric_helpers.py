"""
Evaluation of downscaled precipitation: accuracy (bias, RMSE), the Climdex extreme indices R20 and SDII, rain/no-rain
precision-recall, probability integral transform (PIT) values and the interval calibration curve c(z) with its RMSE.

All series have time on the leading axis, so a [days] vector and a [days, rows, cols] stack are both accepted and
per-pixel results come back with the trailing shape.
"""
import logging
import warnings

import numpy as np
import pandas as pd
from sklearn.metrics import average_precision_score

from dc_bdl_tools.Utils.errors import ContractError, DomainError
from dc_bdl_tools.Utils.likelihoods import DC_MODELS, RAIN_THRESHOLD, is_wet, predictive_cdf

logger = logging.getLogger(__name__)

# mm/day
R20_THRESHOLD = 20.
SDII_WET_THRESHOLD = 0.5

CSV_FLOAT_FORMAT = '%.10g'


def _aligned(pred, obs):
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ContractError('prediction {} and observation {} are not aligned'.format(pred.shape, obs.shape))
    if pred.ndim == 0 or pred.shape[0] == 0:
        raise ContractError('need at least one day')
    return pred, obs


def bias_rmse(pred, obs):
    """
    Per-pixel bias mean(pred - obs) and RMSE sqrt(mean((pred - obs)^2)) over the leading axis.
    """
    pred, obs = _aligned(pred, obs)
    diff = pred - obs
    return diff.mean(axis=0), np.sqrt((diff ** 2).mean(axis=0))


def year_labels(days, days_per_year=365):
    """Integer year of each day index."""
    return np.asarray(days) // days_per_year


def _check_years(series, years):
    series = np.asarray(series, dtype=float)
    years = np.asarray(years)
    if series.ndim == 0 or series.shape[0] == 0:
        raise DomainError('empty year: the series holds no days')
    if years.shape != (series.shape[0],):
        raise ContractError('need one year label per day ({} labels for {} days)'.format(years.size,
                                                                                       series.shape[0]))
    return series, years


def climdex_r20(series, years):
    """
    R20: number of days with at least 20 mm per year, averaged over years.

    Parameters
    ----------
    series: array
        [days, ...] daily precipitation in mm.
    years: array
        Year label of each day.
    """
    series, years = _check_years(series, years)
    counts = [(series[years == y] >= R20_THRESHOLD).sum(axis=0) for y in np.unique(years)]
    return np.mean(counts, axis=0)


def climdex_sdii(series, years, on_undefined='raise'):
    """
    SDII: total precipitation on wet days (>= 0.5 mm) divided by the number of wet days, per year, averaged over
    years. Years without a wet day are skipped with a warning.

    Parameters
    ----------
    series: array
        [days, ...] daily precipitation in mm.
    years: array
        Year label of each day.
    on_undefined: str
        'raise' raises DomainError when a series has no wet day at all; 'nan' reports nan for it instead.
    """
    series, years = _check_years(series, years)
    if on_undefined not in ('raise', 'nan'):
        raise ContractError("on_undefined must be 'raise' or 'nan'")

    totals = []
    n_wet = []
    for y in np.unique(years):
        x = series[years == y]
        wet = x >= SDII_WET_THRESHOLD
        totals.append(np.where(wet, x, 0.).sum(axis=0))
        n_wet.append(wet.sum(axis=0))
    totals = np.asarray(totals)
    n_wet = np.asarray(n_wet)

    has_wet = n_wet > 0
    n_skipped = int((~has_wet).sum())
    if n_skipped:
        warnings.warn('SDII skipped {} dry year(s) with no day >= {} mm'.format(n_skipped, SDII_WET_THRESHOLD))

    n_years = has_wet.sum(axis=0)
    if np.any(n_years == 0) and on_undefined == 'raise':
        raise DomainError('SDII is undefined for a series without wet days')
    per_year = np.where(has_wet, totals / np.where(has_wet, n_wet, 1), 0.)
    sdii = np.where(n_years > 0, per_year.sum(axis=0) / np.maximum(n_years, 1), np.nan)
    return float(sdii) if sdii.ndim == 0 else sdii


def precision_recall(prob, labels):
    """
    Precision and recall of classifying wet days by thresholding the predicted rain probability, one point per
    distinct probability (descending thresholds, days at or above the threshold are called wet).

    Parameters
    ----------
    prob: array
        Predicted rain probabilities.
    labels: array of bool
        Observed wet days (obs > 0.5 mm). Same shape as prob.

    Returns
    -------
    pandas.DataFrame
        Columns threshold, precision, recall, sorted by recall.
    """
    prob = np.asarray(prob, dtype=float).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if prob.shape != labels.shape:
        raise ContractError('need one label per probability')
    n_pos = labels.sum()
    if n_pos == 0:
        raise DomainError('precision-recall needs at least one wet observation')

    order = np.argsort(-prob, kind='mergesort')
    prob = prob[order]
    labels = labels[order]
    tp = np.cumsum(labels)
    fp = np.cumsum(~labels)

    # last index of each run of tied probabilities
    last = np.r_[np.nonzero(np.diff(prob))[0], prob.size - 1]
    res = pd.DataFrame({'threshold': prob[last],
                        'precision': tp[last] / (tp[last] + fp[last]),
                        'recall': tp[last] / n_pos})
    return res.sort_values(['recall', 'threshold'], ascending=[True, False], kind='mergesort').reset_index(drop=True)


def average_precision(prob, labels):
    """Area under the precision-recall curve (step interpolation)."""
    labels = np.asarray(labels, dtype=bool).ravel()
    if not labels.any():
        raise DomainError('average precision needs at least one wet observation')
    return float(average_precision_score(labels, np.asarray(prob, dtype=float).ravel()))


def pit_values(obs, dist, passes=None, rng=None, rain_threshold=RAIN_THRESHOLD):
    """
    Probability integral transform u = F(y) of every observation under its predictive distribution.

    For the hurdle models an observation in the dry atom (y <= rain_threshold) gets a randomized PIT drawn
    uniformly from (0, 1 - p), which stays uniform under perfect calibration.

    Parameters
    ----------
    obs: array
        mm/day, same shape as the distribution.
    dist: PredictiveDistribution
    passes: McPassSet, optional
        Needed for mc_mixture distributions.
    rng: numpy.random.Generator, optional
        For the randomized dry-atom PIT.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.shape != dist.shape:
        raise ContractError('observations {} do not match distribution {}'.format(obs.shape, dist.shape))
    if dist.model_tag not in DC_MODELS:
        return predictive_cdf(dist, obs, passes)

    rng = np.random.default_rng(0) if rng is None else rng
    dry = ~is_wet(obs, rain_threshold)
    u = predictive_cdf(dist, np.where(dry, 0., obs), passes)
    dry_mass = 1. - np.asarray(dist.rain_prob, dtype=float)
    return np.where(dry, rng.uniform(size=obs.shape) * dry_mass, u)


class CalibrationReport(object):
    """
    Calibration curve c(z) at z = k / K, k = 1..K, and its RMSE against the diagonal.

    Attributes
    ----------
    z, c_values: arrays of length K
    rmse_cal: float
    population: int
        Number of PIT values used.
    """

    def __init__(self, z, c_values, rmse_cal, population):
        self.z = z
        self.c_values = c_values
        self.rmse_cal = rmse_cal
        self.population = population

    @property
    def n_bins(self):
        return len(self.z)

    def to_frame(self):
        return pd.DataFrame({'z': self.z, 'c_z': self.c_values})


def _z_grid(n_bins):
    if n_bins < 1:
        raise DomainError('need at least one calibration bin')
    return np.arange(1, n_bins + 1) / float(n_bins)


def _coverage_fraction(u, z):
    # fraction of u strictly inside (0.5 - z/2, 0.5 + z/2)
    return np.mean((u > 0.5 - z / 2.) & (u < 0.5 + z / 2.))


def calibration(obs, pit, n_bins=100, wet_only=True, rain_threshold=RAIN_THRESHOLD):
    """
    Interval calibration: c(z) is the fraction of PIT values inside the central interval of width z,
    RMSE_cal = sqrt(mean_k (c(k/K) - k/K)^2).

    Parameters
    ----------
    obs: array
        Observations in mm, used only to filter the population.
    pit: array
        PIT value of each observation, computed once (see pit_values).
    n_bins: int
        K
    wet_only: bool
        Keep only wet observations, those above rain_threshold.
    """
    obs = np.asarray(obs, dtype=float)
    pit = np.asarray(pit, dtype=float)
    if obs.shape != pit.shape:
        raise ContractError('need one PIT value per observation')
    u = pit[is_wet(obs, rain_threshold)] if wet_only else pit.ravel()
    if u.size == 0:
        raise DomainError('no observations left to calibrate against')

    z = _z_grid(n_bins)
    c = np.array([_coverage_fraction(u, zk) for zk in z])
    rmse = float(np.sqrt(np.mean((c - z) ** 2)))
    return CalibrationReport(z, c, rmse, int(u.size))


def calibration_by_pixel(obs, pit, n_bins=100, wet_only=True, rain_threshold=RAIN_THRESHOLD, band=(10, 90)):
    """
    Calibration of each pixel over its day series.

    Parameters
    ----------
    obs, pit: arrays
        [days, rows, cols]
    band: tuple
        Percentiles of c(z) across pixels to report.

    Returns
    -------
    rmse_map: array
        [rows, cols] RMSE_cal per pixel; nan where the pixel has no observation left after filtering.
    c_band: pandas.DataFrame
        Columns z, c_low, c_high: the band of per-pixel calibration curves.
    """
    obs = np.asarray(obs, dtype=float)
    pit = np.asarray(pit, dtype=float)
    if obs.shape != pit.shape or obs.ndim < 2:
        raise ContractError('need aligned [days, ...] observation and PIT stacks')
    valid = is_wet(obs, rain_threshold) if wet_only else np.ones(obs.shape, dtype=bool)
    n_valid = valid.sum(axis=0)
    has_data = n_valid > 0
    if not np.any(has_data):
        raise DomainError('no pixel has observations left to calibrate against')
    if not np.all(has_data):
        logger.info('%d pixels have no observations left after filtering', int((~has_data).sum()))

    z = _z_grid(n_bins)
    c = np.empty((n_bins,) + obs.shape[1:])
    for k, zk in enumerate(z):
        inside = valid & (pit > 0.5 - zk / 2.) & (pit < 0.5 + zk / 2.)
        c[k] = np.where(has_data, inside.sum(axis=0) / np.maximum(n_valid, 1), np.nan)

    z_b = z.reshape((-1,) + (1,) * (obs.ndim - 1))
    rmse_map = np.where(has_data, np.sqrt(np.mean((c - z_b) ** 2, axis=0)), np.nan)
    flat = c.reshape(n_bins, -1)[:, has_data.ravel()]
    c_band = pd.DataFrame({'z': z, 'c_low': np.percentile(flat, band[0], axis=1),
                           'c_high': np.percentile(flat, band[1], axis=1)})
    return rmse_map, c_band


def interval_coverage(obs, lower, upper):
    """Fraction of observations with lower <= obs <= upper."""
    obs = np.asarray(obs, dtype=float)
    lower, upper = np.broadcast_arrays(lower, upper)
    if lower.shape != obs.shape:
        raise ContractError('interval bounds do not match the observations')
    if obs.size == 0:
        raise DomainError('no observations')
    return float(np.mean((obs >= lower) & (obs <= upper)))


class MetricsTable(object):
    """
    Per-pixel accuracy metrics of a predicted expectation series against observations and their aggregate
    (mean and standard deviation across pixels, or across days with aggregate='days').

    Attributes
    ----------
    per_pixel: pandas.DataFrame
        row, col, bias, rmse, r20_error, sdii_error
    aggregate: pandas.DataFrame
        metric, mean, std
    """

    metrics = ['bias', 'rmse', 'r20_error', 'sdii_error']

    def __init__(self, pred, obs, years, aggregate='pixels'):
        if aggregate not in ('pixels', 'days'):
            raise ContractError("aggregate must be 'pixels' or 'days'")
        pred, obs = _aligned(pred, obs)
        if pred.ndim != 3:
            raise ContractError('expected [days, rows, cols] stacks, got {}'.format(pred.shape))
        self.aggregate_over = aggregate

        bias, rmse = bias_rmse(pred, obs)
        r20_err = climdex_r20(pred, years) - climdex_r20(obs, years)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            sdii_err = climdex_sdii(pred, years, on_undefined='nan') - climdex_sdii(obs, years, on_undefined='nan')

        rows, cols = np.meshgrid(np.arange(pred.shape[1]), np.arange(pred.shape[2]), indexing='ij')
        self.per_pixel = pd.DataFrame({'row': rows.ravel(), 'col': cols.ravel(), 'bias': bias.ravel(),
                                       'rmse': rmse.ravel(), 'r20_error': r20_err.ravel(),
                                       'sdii_error': sdii_err.ravel()})

        if aggregate == 'pixels':
            summary = self.per_pixel[self.metrics]
        else:
            diff = pred - obs
            summary = pd.DataFrame({'bias': diff.mean(axis=(1, 2)),
                                    'rmse': np.sqrt((diff ** 2).mean(axis=(1, 2)))})
            summary['r20_error'] = np.nanmean(r20_err)
            summary['sdii_error'] = np.nanmean(sdii_err)
        self.aggregate = pd.DataFrame({'metric': self.metrics,
                                       'mean': [summary[m].mean() for m in self.metrics],
                                       'std': [summary[m].std(ddof=0) for m in self.metrics]})

    def value(self, metric):
        return float(self.aggregate.set_index('metric').loc[metric, 'mean'])

    def map(self, metric):
        """Per-pixel metric as a [rows, cols] array."""
        shape = (self.per_pixel['row'].max() + 1, self.per_pixel['col'].max() + 1)
        return self.per_pixel[metric].values.reshape(shape)


def write_table(df, path):
    """CSV with a fixed float format so repeated runs write identical bytes."""
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
