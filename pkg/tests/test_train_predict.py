import os

import numpy as np
import pytest

from dc_bdl_tools.ExperimentLevel import srcnn
from dc_bdl_tools.ExperimentLevel.Analyses.experiment_predict import (mc_predict, predict_distribution,
                                                                      read_prediction, worker_count,
                                                                      write_prediction)
from dc_bdl_tools.ExperimentLevel.Analyses.experiment_train import TrainingConfig, train, training_step
from dc_bdl_tools.ExperimentLevel.par_funcs import pass_rng
from dc_bdl_tools.Utils import grid_helpers
from dc_bdl_tools.Utils.errors import ConfigError, ContractError, DomainError, TrainingDivergedError

from conftest import small_network


def random_patches(rng, n=12, size=6):
    inputs = rng.standard_normal((n, 2, size, size)).astype(np.float32)
    labels = np.where(rng.uniform(size=(n, 1, size, size)) < 0.5, 0., rng.gamma(2., 4., size=(n, 1, size, size)))
    offsets = [(i, 0, 0) for i in range(n)]
    return grid_helpers.PatchSet(inputs, labels, offsets, size, size)


def small_config(**kwargs):
    return srcnn.NetworkConfig(kwargs.pop('kernel_sizes', (3, 3, 3)), kwargs.pop('filters', (4, 4)),
                               kwargs.pop('model_tag', 'gaussian'))


############
# TRAINING #
############
def test_training_config_validation():
    with pytest.raises(DomainError):
        TrainingConfig(learning_rate=0.)
    with pytest.raises(DomainError):
        TrainingConfig(iterations=-1)
    with pytest.raises(ContractError):
        TrainingConfig(model_tag='poisson')
    assert TrainingConfig(model_tag='dc_lognormal').precip_scale == 1.
    assert TrainingConfig(model_tag='dc_gaussian').precip_scale == 0.01


def test_training_step_outputs(model_tag, rng):
    weights = small_network(model_tag)
    patches = random_patches(rng)
    config = TrainingConfig(model_tag=model_tag, dataset_size=1000)
    nll_val, kl_val, grads = training_step(weights, patches.inputs[:4], patches.labels[:4], config,
                                           np.random.default_rng(0))
    assert np.isfinite(nll_val) and np.isfinite(kl_val)
    assert list(grads) == list(weights.parameters())
    for name, value in weights.parameters().items():
        assert grads[name].shape == value.shape


def test_learns_a_linear_map(rng):
    # a single 1x1 layer: location = (k + 1) * x0 + k' * x1 + b, so the kernel should settle at slope - 1
    slope = 2.
    x = rng.uniform(0., 1., size=(64, 2, 4, 4)).astype(np.float32)
    x[:, 1] = 0.
    y_scaled = slope * x[:, :1] + 0.05 * rng.standard_normal((64, 1, 4, 4))
    patches = grid_helpers.PatchSet(x, 100. * y_scaled, [(i, 0, 0) for i in range(64)], 4, 4)

    network = srcnn.NetworkConfig(kernel_sizes=(1,), filters=(), model_tag='gaussian')
    config = TrainingConfig(learning_rate=1e-2, batch_size=16, iterations=1500, seed=3, model_tag='gaussian',
                            log_every=1)
    weights, log = train(config, patches, network, progress=False)

    assert weights.kernels[0][0, 0, 0, 0] + 1. == pytest.approx(slope, abs=0.05)
    assert abs(weights.biases[0][0]) < 0.05
    assert log['nll'].iloc[-1] < log['nll'].iloc[0]


def test_training_log_columns(rng):
    patches = random_patches(rng)
    config = TrainingConfig(iterations=25, log_every=10, batch_size=4, dataset_size=432)
    _, log = train(config, patches, small_config(), progress=False)
    assert list(log.columns) == ['iteration', 'nll', 'kl', 'p_layer1', 'p_layer2', 'seconds']
    assert list(log['iteration']) == [10, 20, 25]
    assert log[['p_layer1', 'p_layer2']].values.min() > 0


def test_training_is_reproducible(rng):
    patches = random_patches(rng)
    config = TrainingConfig(iterations=5, batch_size=3, seed=8, model_tag='dc_gaussian', dataset_size=432)
    a, log_a = train(config, patches, small_config(model_tag='dc_gaussian'), progress=False)
    b, log_b = train(config, patches, small_config(model_tag='dc_gaussian'), progress=False)
    for name, value in a.parameters().items():
        np.testing.assert_array_equal(value, b.parameters()[name])
    np.testing.assert_array_equal(log_a['nll'].values, log_b['nll'].values)

    config.seed = 9
    c, _ = train(config, patches, small_config(model_tag='dc_gaussian'), progress=False)
    assert not np.array_equal(a.kernels[0], c.kernels[0])


def test_zero_iterations_return_the_initialization(rng):
    patches = random_patches(rng)
    network = small_config()
    weights, log = train(TrainingConfig(iterations=0, seed=6), patches, network, progress=False)
    init_seq = np.random.SeedSequence(6).spawn(3)[0]
    expected = srcnn.init_weights(network, np.random.default_rng(init_seq))
    for name, value in expected.parameters().items():
        np.testing.assert_array_equal(weights.parameters()[name], value)
    assert len(log) == 0


@pytest.mark.slow
def test_data_term_pushes_dropout_down(rng):
    x = rng.uniform(0., 1., size=(32, 2, 6, 6)).astype(np.float32)
    patches = grid_helpers.PatchSet(x, 100. * (2. * x[:, :1] + 0.5 * x[:, 1:]), [(i, 0, 0) for i in range(32)], 6, 6)
    network = srcnn.NetworkConfig((3, 3, 3), (8, 8), 'gaussian', init_p=0.5)
    config = TrainingConfig(learning_rate=1e-2, batch_size=8, iterations=2000, seed=1, dataset_size=10 ** 9,
                            log_every=100)
    _, log = train(config, patches, network, progress=False)
    assert log['p_layer1'].iloc[-1] < 0.4
    assert log['p_layer2'].iloc[-1] < 0.4


def test_kl_dominated_training_drives_dropout_to_half(rng):
    # tau = 1e-5 over a single target: the weight penalty zeroes the gated kernels and the entropy term takes over
    patches = random_patches(rng)
    config = TrainingConfig(learning_rate=0.05, batch_size=4, iterations=400, tau=1e-5, seed=2, dataset_size=1,
                            log_every=100)
    weights, log = train(config, patches, small_config(), progress=False)
    assert log['p_layer1'].iloc[-1] == pytest.approx(0.5, abs=0.02)
    assert log['p_layer2'].iloc[-1] == pytest.approx(0.5, abs=0.02)
    assert weights.dropout_probs == pytest.approx([0.5, 0.5], abs=0.02)
    assert np.sum(weights.kernels[1] ** 2) < 0.5


def test_training_writes_checkpoint(tmp_path, rng):
    patches = random_patches(rng)
    path = str(tmp_path / 'w.dcbw')
    weights, _ = train(TrainingConfig(iterations=3, batch_size=2, seed=4), patches, small_config(),
                       checkpoint_file=path, header={'normalizer': {'precip_scale': 0.01}}, progress=False)
    loaded, header = srcnn.load_weights(path)
    assert header['seed'] == 4
    assert header['model_tag'] == 'gaussian'
    assert header['normalizer'] == {'precip_scale': 0.01}
    np.testing.assert_array_equal(loaded.kernels[1], weights.kernels[1])


def test_divergence_checkpoints_last_good_weights(tmp_path, rng):
    patches = random_patches(rng)
    patches.labels[:] = np.nan
    path = str(tmp_path / 'w.dcbw')
    start = small_network(seed=2)
    with pytest.raises(TrainingDivergedError) as info:
        train(TrainingConfig(iterations=10, batch_size=2), patches, small_config(), weights=start,
              checkpoint_file=path, progress=False)
    assert info.value.iteration == 1
    assert info.value.checkpoint_file == path

    loaded, header = srcnn.load_weights(path)
    assert header['diverged_at'] == 1
    np.testing.assert_array_equal(loaded.kernels[0], start.kernels[0])


def test_training_checks_the_network(rng):
    patches = random_patches(rng)
    with pytest.raises(ContractError):
        train(TrainingConfig(model_tag='dc_gaussian'), patches, small_config(model_tag='gaussian'), progress=False)
    with pytest.raises(ContractError):
        empty = grid_helpers.PatchSet(patches.inputs[:0], patches.labels[:0], [], 6, 6)
        train(TrainingConfig(), empty, small_config(), progress=False)


#############
# INFERENCE #
#############
def test_mc_predict_shapes(model_tag, rng):
    weights = small_network(model_tag)
    passes = mc_predict(weights, rng.standard_normal((3, 2, 5, 5)), T=4, seed=1, n_jobs=1)
    assert passes.T == 4
    assert passes.location.shape == (4, 3, 5, 5)
    assert passes.model_tag == model_tag
    assert passes.precip_scale == grid_helpers.precip_scale_for(model_tag)
    assert (passes.phi is None) == (model_tag == 'gaussian')


def test_single_pass_is_a_seeded_forward_pass(rng):
    weights = small_network('dc_gaussian', init_p=0.3)
    inputs = rng.standard_normal((3, 2, 5, 5)).astype(np.float32)
    passes = mc_predict(weights, inputs, T=1, seed=13, n_jobs=1, chunk_size=3)
    head = srcnn.forward(inputs, weights, noise=pass_rng(13, 0))
    np.testing.assert_array_equal(passes.location[0], head.location.numpy()[:, 0])
    np.testing.assert_array_equal(passes.phi[0], head.phi.numpy()[:, 0])


def test_mc_predict_is_reproducible(rng):
    weights = small_network('dc_lognormal', init_p=0.3)
    inputs = rng.standard_normal((5, 2, 6, 6)).astype(np.float32)
    a = mc_predict(weights, inputs, T=3, seed=21, n_jobs=1, chunk_size=5)
    b = mc_predict(weights, inputs, T=3, seed=21, n_jobs=1, chunk_size=5)
    np.testing.assert_array_equal(a.location, b.location)
    np.testing.assert_array_equal(a.phi, b.phi)

    chunked = mc_predict(weights, inputs, T=3, seed=21, n_jobs=1, chunk_size=2)
    np.testing.assert_allclose(chunked.location, a.location, rtol=1e-5, atol=1e-6)

    other = mc_predict(weights, inputs, T=3, seed=22, n_jobs=1, chunk_size=5)
    assert not np.array_equal(other.location, a.location)


def test_mc_predict_does_not_depend_on_workers(rng):
    weights = small_network('gaussian', init_p=0.3)
    inputs = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
    serial = mc_predict(weights, inputs, T=4, seed=5, n_jobs=1)
    parallel = mc_predict(weights, inputs, T=4, seed=5, n_jobs=2)
    np.testing.assert_allclose(parallel.location, serial.location, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(parallel.s, serial.s, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize('env, requested, expected', [(None, None, 1), ('4', None, 4), (None, 3, 3),
                                                      ('2', 8, 2), ('8', 3, 3), ('1', 1, 1)])
def test_worker_count_is_capped_by_the_environment(monkeypatch, env, requested, expected):
    if env is None:
        monkeypatch.delenv('DCBDL_THREADS', raising=False)
    else:
        monkeypatch.setenv('DCBDL_THREADS', env)
    assert worker_count(requested) == expected


def test_worker_count_rejects_bad_settings(monkeypatch):
    monkeypatch.setenv('DCBDL_THREADS', 'many')
    with pytest.raises(ConfigError):
        worker_count(2)
    monkeypatch.setenv('DCBDL_THREADS', '0')
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.delenv('DCBDL_THREADS')
    with pytest.raises(ContractError):
        worker_count(0)
    assert worker_count(-1) >= 1


def test_capped_workers_give_the_same_passes(monkeypatch, rng):
    weights = small_network('dc_gaussian', init_p=0.3)
    inputs = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
    monkeypatch.setenv('DCBDL_THREADS', '1')
    capped = mc_predict(weights, inputs, T=3, seed=5, n_jobs=4)
    monkeypatch.delenv('DCBDL_THREADS')
    serial = mc_predict(weights, inputs, T=3, seed=5, n_jobs=1)
    np.testing.assert_array_equal(capped.location, serial.location)
    np.testing.assert_array_equal(capped.phi, serial.phi)


def test_passes_differ_with_dropout(rng):
    weights = small_network('gaussian', init_p=0.3)
    passes = mc_predict(weights, rng.standard_normal((1, 2, 6, 6)), T=6, seed=0, n_jobs=1)
    dist = predict_distribution(passes)
    assert np.mean(dist.epistemic > 0) > 0.5
    assert np.all(dist.variance >= dist.aleatoric)


def test_no_dropout_means_no_epistemic_variance(rng):
    weights = small_network('gaussian', init_p=0.3).with_dropout_probs([0., 0.])
    passes = mc_predict(weights, rng.standard_normal((2, 2, 6, 6)), T=5, seed=0, n_jobs=1)
    dist = predict_distribution(passes)
    np.testing.assert_array_equal(dist.epistemic, 0.)
    np.testing.assert_allclose(dist.variance, dist.aleatoric)


def test_mc_mean_error_shrinks_like_root_passes(rng):
    weights = small_network('gaussian', init_p=0.3)
    inputs = rng.standard_normal((4, 2, 6, 6)).astype(np.float32)
    reference = mc_predict(weights, inputs, T=2048, seed=0, n_jobs=1).location.mean(axis=0)

    # pass t depends only on (seed, t), so the first 8 passes of a 128-pass set are an 8-pass set
    sq_err = {8: [], 128: []}
    for seed in range(1, 9):
        location = mc_predict(weights, inputs, T=128, seed=seed, n_jobs=1).location
        for T in sq_err:
            sq_err[T].append(np.mean((location[:T].mean(axis=0) - reference) ** 2))
    ratio = np.sqrt(np.mean(sq_err[8]) / np.mean(sq_err[128]))
    assert 2.5 < ratio < 6.5


def test_mc_predict_validation(rng):
    weights = small_network()
    with pytest.raises(ContractError):
        mc_predict(weights, rng.standard_normal((2, 2, 6, 6)), T=0)
    with pytest.raises(ContractError):
        mc_predict(weights, rng.standard_normal((2, 6, 6)), T=2)


def test_prediction_files_round_trip(tmp_path, rng):
    weights = small_network('dc_gaussian')
    passes = mc_predict(weights, rng.standard_normal((3, 2, 5, 5)), T=3, seed=2, n_jobs=1)
    dist = predict_distribution(passes, 'mc_mixture')
    out_dir = str(tmp_path / 'pred')
    write_prediction(out_dir, passes, dist, [7, 8, 9], cell_size=4.)

    assert sorted(os.listdir(out_dir)) == sorted(['E', 'Var', 'p', 'E2', 'm', 'v', 'passes.p'])
    grids, days = grid_helpers.read_grid_sequence(os.path.join(out_dir, 'E'))
    assert days == [7, 8, 9]
    assert grids[0].variable == 'derived'
    np.testing.assert_allclose(np.stack([g.values for g in grids]), dist.mean, rtol=1e-6, atol=1e-6)

    loaded, loaded_passes, loaded_days = read_prediction(out_dir)
    assert loaded.cdf_mode == 'mc_mixture'
    assert loaded_days == [7, 8, 9]
    np.testing.assert_array_equal(loaded.mean, dist.mean)
    np.testing.assert_array_equal(loaded_passes.phi, passes.phi)


def test_read_prediction_needs_passes(tmp_path):
    with pytest.raises(ContractError):
        read_prediction(str(tmp_path))
