import numpy as np
import pandas as pd
import pytest

from dc_bdl_tools.Utils import metric_helpers as mh
from dc_bdl_tools.Utils.errors import ContractError, DomainError
from dc_bdl_tools.Utils.likelihoods import McPassSet, predictive_distribution


def test_bias_rmse():
    bias, rmse = mh.bias_rmse([1., 2., 3.], [0., 2., 5.])
    assert float(bias) == pytest.approx(-1. / 3.)
    assert float(rmse) == pytest.approx(np.sqrt(5. / 3.))


def test_bias_rmse_per_pixel(rng):
    obs = rng.gamma(1., 3., size=(10, 2, 3))
    bias, rmse = mh.bias_rmse(obs + 2., obs)
    np.testing.assert_allclose(bias, 2.)
    np.testing.assert_allclose(rmse, 2.)
    with pytest.raises(ContractError):
        mh.bias_rmse(obs, obs[:5])


def test_bias_rmse_matches_loops(rng):
    pred = rng.gamma(1., 5., size=(40, 3))
    obs = rng.gamma(1., 5., size=(40, 3))
    bias, rmse = mh.bias_rmse(pred, obs)
    for j in range(3):
        diffs = [pred[i, j] - obs[i, j] for i in range(40)]
        assert bias[j] == pytest.approx(sum(diffs) / 40., abs=1e-9)
        assert rmse[j] == pytest.approx(np.sqrt(sum(d * d for d in diffs) / 40.), abs=1e-9)


def test_year_labels():
    np.testing.assert_array_equal(mh.year_labels([0, 364, 365, 800]), [0, 0, 1, 2])
    np.testing.assert_array_equal(mh.year_labels([0, 9, 10], days_per_year=10), [0, 0, 1])


def test_r20():
    assert mh.climdex_r20([25., 10., 20., 30.], [0, 0, 1, 1]) == 1.5
    np.testing.assert_array_equal(mh.climdex_r20(np.zeros((4, 2)), [0, 0, 0, 0]), [0., 0.])


def test_r20_checks():
    with pytest.raises(DomainError):
        mh.climdex_r20(np.zeros(0), [])
    with pytest.raises(ContractError):
        mh.climdex_r20([1., 2.], [0])


def test_sdii():
    assert mh.climdex_sdii([0., 1., 3., 0.2], [0, 0, 0, 0]) == 2.
    assert mh.climdex_sdii([0.5, 4., 10., 10.], [0, 0, 1, 1]) == pytest.approx((2.25 + 10.) / 2)


def test_r20_counts_the_threshold_day():
    series = np.zeros(365)
    series[:3] = [25., 19.9, 20.]
    assert mh.climdex_r20(series, np.zeros(365, dtype=int)) == 2.


def test_sdii_constant_intensity():
    series = np.zeros(365)
    series[::5] = 10.
    assert mh.climdex_sdii(series, np.zeros(365, dtype=int)) == pytest.approx(10.)
    single = np.zeros(365)
    single[100] = 7.
    assert mh.climdex_sdii(single, np.zeros(365, dtype=int)) == pytest.approx(7.)


def loop_r20(series, years):
    counts = {}
    for x, y in zip(series, years):
        counts[y] = counts.get(y, 0) + (1 if x >= 20. else 0)
    return sum(counts.values()) / float(len(counts))


def loop_sdii(series, years):
    totals, wet_days = {}, {}
    for x, y in zip(series, years):
        if x >= 0.5:
            totals[y] = totals.get(y, 0.) + x
            wet_days[y] = wet_days.get(y, 0) + 1
    return sum(totals[y] / wet_days[y] for y in totals) / float(len(totals))


def test_climdex_match_loops(rng):
    for _ in range(1000):
        n_days = int(rng.integers(30, 120))
        series = np.where(rng.uniform(size=n_days) < 0.4, rng.gamma(0.8, 12., size=n_days), 0.)
        series[0] = 5.
        years = np.sort(rng.integers(0, 3, size=n_days))
        years = np.unique(years, return_inverse=True)[1]
        assert mh.climdex_r20(series, years) == loop_r20(series, years)
        if all(np.any(series[years == y] >= 0.5) for y in np.unique(years)):
            assert mh.climdex_sdii(series, years) == pytest.approx(loop_sdii(series, years), abs=1e-9)


def test_sdii_skips_dry_years():
    with pytest.warns(UserWarning):
        sdii = mh.climdex_sdii([0., 0., 2., 4.], [0, 0, 1, 1])
    assert sdii == 3.


def test_sdii_undefined():
    with pytest.warns(UserWarning):
        with pytest.raises(DomainError):
            mh.climdex_sdii([0., 0.1], [0, 0])
    with pytest.warns(UserWarning):
        assert np.isnan(mh.climdex_sdii([0., 0.1], [0, 0], on_undefined='nan'))


def test_precision_recall():
    pr = mh.precision_recall([0.9, 0.8, 0.8, 0.1], [True, False, True, False])
    assert list(pr.columns) == ['threshold', 'precision', 'recall']
    np.testing.assert_allclose(pr['threshold'], [0.9, 0.8, 0.1])
    np.testing.assert_allclose(pr['precision'], [1., 2. / 3., 0.5])
    np.testing.assert_allclose(pr['recall'], [0.5, 1., 1.])


def loop_precision_recall(prob, labels):
    points = []
    for t in sorted(set(prob), reverse=True):
        called = [p >= t for p in prob]
        tp = sum(1 for c, l in zip(called, labels) if c and l)
        points.append((t, tp / float(sum(called)), tp / float(sum(labels))))
    return sorted(points, key=lambda x: (x[2], -x[0]))


def test_precision_recall_matches_loops(rng):
    for _ in range(1000):
        n = int(rng.integers(5, 40))
        prob = rng.integers(0, 10, size=n) / 10.
        labels = rng.uniform(size=n) < 0.5
        labels[0] = True
        pr = mh.precision_recall(prob, labels)
        expected = np.array(loop_precision_recall(list(prob), list(labels)))
        np.testing.assert_array_equal(pr[['threshold', 'precision', 'recall']].values, expected)


def test_precision_recall_limits():
    perfect = mh.precision_recall([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
    assert np.all(perfect.groupby('recall')['precision'].max() == 1.)
    constant = mh.precision_recall(np.full(8, 0.3), [True, False, False, True, False, False, False, False])
    assert len(constant) == 1
    assert constant['recall'][0] == 1.
    assert constant['precision'][0] == 0.25


def test_precision_recall_needs_wet_days():
    with pytest.raises(DomainError):
        mh.precision_recall([0.2, 0.7], [False, False])
    with pytest.raises(DomainError):
        mh.average_precision([0.2, 0.7], [False, False])


def test_average_precision():
    assert mh.average_precision([0.9, 0.7, 0.2, 0.1], [True, True, False, False]) == 1.
    assert mh.average_precision([0.9, 0.8, 0.8, 0.1], [True, False, True, False]) == pytest.approx(
        0.5 * 1. + 0.5 * 2. / 3.)


###############
# CALIBRATION #
###############
def test_uniform_pit_is_calibrated(rng):
    pit = rng.uniform(size=200000)
    report = mh.calibration(np.ones_like(pit), pit, n_bins=100)
    assert report.rmse_cal < 0.005
    assert report.population == pit.size
    assert report.n_bins == 100


def test_calibration_closed_forms():
    z = np.arange(1, 11) / 10.
    centred = mh.calibration(np.ones(5), np.full(5, 0.5), n_bins=10)
    np.testing.assert_array_equal(centred.c_values, 1.)
    assert centred.rmse_cal == pytest.approx(np.sqrt(np.mean((1 - z) ** 2)))

    # intervals are open, so a PIT of exactly 0 is never covered
    edge = mh.calibration(np.ones(5), np.zeros(5), n_bins=10)
    np.testing.assert_array_equal(edge.c_values, 0.)
    assert edge.rmse_cal == pytest.approx(np.sqrt(np.mean(z ** 2)))

    tail = mh.calibration(np.ones(5), np.full(5, 0.999), n_bins=100)
    np.testing.assert_array_equal(tail.c_values[:-1], 0.)
    assert tail.c_values[-1] == 1.


def test_calibration_population():
    obs = np.array([0., 0.49, 0.5, 3.])
    pit = np.array([0.1, 0.2, 0.5, 0.6])
    assert mh.calibration(obs, pit, n_bins=4).population == 1
    assert mh.calibration(obs, pit, n_bins=4, wet_only=False).population == 4
    with pytest.raises(DomainError):
        mh.calibration(np.zeros(3), np.full(3, 0.5))


def test_calibration_frame():
    frame = mh.calibration(np.ones(3), np.array([0.2, 0.5, 0.9]), n_bins=5).to_frame()
    assert list(frame.columns) == ['z', 'c_z']
    assert len(frame) == 5


def test_calibration_by_pixel(rng):
    obs = rng.gamma(1., 5., size=(50, 2, 2)) + 1.
    obs[:, 1, 1] = 0.
    pit = rng.uniform(size=obs.shape)
    rmse_map, band = mh.calibration_by_pixel(obs, pit, n_bins=10)
    assert rmse_map.shape == (2, 2)
    assert np.isnan(rmse_map[1, 1])
    assert np.all(np.isfinite(rmse_map[[0, 0, 1], [0, 1, 0]]))
    assert list(band.columns) == ['z', 'c_low', 'c_high']
    assert np.all(band['c_low'] <= band['c_high'])


def test_pit_randomizes_the_dry_atom(rng):
    shape = (20000,)
    passes = McPassSet(np.full((2,) + shape, 8.), np.zeros((2,) + shape), np.full((2,) + shape, 0.4),
                       'dc_gaussian')
    dist = predictive_distribution(passes)
    dry_mass = 1. / (1. + np.exp(0.4))
    pit = mh.pit_values(np.zeros(shape), dist, rng=rng)
    assert pit.min() >= 0. and pit.max() <= dry_mass
    assert pit.mean() == pytest.approx(dry_mass / 2., rel=0.02)

    wet = mh.pit_values(np.full(shape, 8.), dist)
    np.testing.assert_allclose(wet, dry_mass + (1 - dry_mass) * 0.5, rtol=1e-6)


def test_threshold_day_is_dry_for_pit_and_calibration(rng):
    shape = (4000,)
    passes = McPassSet(np.full((2,) + shape, 8.), np.zeros((2,) + shape), np.full((2,) + shape, 0.4),
                       'dc_gaussian')
    dist = predictive_distribution(passes)
    dry_mass = 1. / (1. + np.exp(0.4))
    obs = np.full(shape, 0.5)
    obs[:1000] = 6.

    pit = mh.pit_values(obs, dist, rng=rng)
    assert np.all(pit[1000:] <= dry_mass)
    report = mh.calibration(obs, pit, n_bins=10)
    assert report.population == 1000
    pixel_obs = np.stack([obs[1000:1010], obs[:10]], axis=1)
    pixel_pit = np.stack([pit[1000:1010], pit[:10]], axis=1)
    rmse_map, _ = mh.calibration_by_pixel(pixel_obs, pixel_pit, n_bins=10)
    assert np.isnan(rmse_map[0]) and np.isfinite(rmse_map[1])


def test_pit_gaussian_is_the_cdf():
    dist = predictive_distribution(McPassSet([[0., 1.]], [[0., 0.]]))
    np.testing.assert_allclose(mh.pit_values(np.array([0., 1.]), dist), 0.5)
    with pytest.raises(ContractError):
        mh.pit_values(np.zeros(3), dist)


def test_interval_coverage():
    obs = np.array([0., 1., 2., 3.])
    assert mh.interval_coverage(obs, np.full(4, 0.5), np.full(4, 2.)) == 0.5
    assert mh.interval_coverage(obs, obs, obs) == 1.
    with pytest.raises(ContractError):
        mh.interval_coverage(obs, np.zeros(3), np.ones(3))


#################
# METRICS TABLE #
#################
def test_metrics_table_perfect_prediction(rng):
    obs = rng.gamma(1., 8., size=(30, 3, 4))
    table = mh.MetricsTable(obs, obs, np.zeros(30, dtype=int))
    assert list(table.per_pixel.columns) == ['row', 'col', 'bias', 'rmse', 'r20_error', 'sdii_error']
    assert len(table.per_pixel) == 12
    for metric in mh.MetricsTable.metrics:
        assert table.value(metric) == 0.


def test_metrics_table_shift(rng):
    obs = rng.gamma(1., 8., size=(20, 2, 2))
    table = mh.MetricsTable(obs + 1., obs, np.arange(20) // 10)
    assert table.value('bias') == pytest.approx(1.)
    assert table.value('rmse') == pytest.approx(1.)
    assert table.map('bias').shape == (2, 2)
    np.testing.assert_allclose(table.map('rmse'), 1.)
    assert list(table.aggregate['metric']) == mh.MetricsTable.metrics


def test_metrics_table_by_days(rng):
    obs = rng.gamma(1., 8., size=(6, 2, 2))
    pred = obs.copy()
    pred[0] += 4.
    table = mh.MetricsTable(pred, obs, np.zeros(6, dtype=int), aggregate='days')
    assert table.value('bias') == pytest.approx(4. / 6.)
    assert table.value('rmse') == pytest.approx(4. / 6.)
    with pytest.raises(ContractError):
        mh.MetricsTable(pred, obs, np.zeros(6, dtype=int), aggregate='years')


def test_write_table(tmp_path):
    path = str(tmp_path / 't.csv')
    mh.write_table(pd.DataFrame({'a': [1. / 3.], 'b': [2]}), path)
    assert open(path).read().splitlines() == ['a,b', '0.3333333333,2']
