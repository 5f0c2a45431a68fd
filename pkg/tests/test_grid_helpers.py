import struct

import numpy as np
import pytest
from scipy import stats

from dc_bdl_tools.Utils import grid_helpers as gh
from dc_bdl_tools.Utils.errors import ContractError, DomainError


##########
# GRIDS #
##########
def test_grid_validation():
    with pytest.raises(DomainError):
        gh.Grid([[0., -1.]])
    with pytest.raises(DomainError):
        gh.Grid([[0., np.nan]], variable='elevation_m')
    with pytest.raises(ContractError):
        gh.Grid(np.zeros(4))
    with pytest.raises(ContractError):
        gh.Grid(np.zeros((2, 2)), variable='temperature')
    assert gh.Grid([[-3.]], variable='elevation_m').shape == (1, 1)


def test_grid_file_round_trip(tmp_path, rng):
    grid = gh.Grid(rng.gamma(1., 5., size=(5, 7)), cell_size=12., variable='precip_mm_per_day')
    path = str(tmp_path / 'g.dcg')
    gh.write_grid(path, grid)
    loaded = gh.read_grid(path)
    assert loaded.shape == (5, 7)
    assert loaded.cell_size == 12.
    assert loaded.variable == 'precip_mm_per_day'
    np.testing.assert_array_equal(loaded.values, grid.values.astype(np.float32))


def test_grid_file_layout(tmp_path):
    path = tmp_path / 'g.dcg'
    gh.write_grid(str(path), gh.Grid([[1., 2., 3.]], cell_size=4., variable='elevation_m'))
    buf = path.read_bytes()
    assert buf[:4] == b'DCG1'
    assert struct.unpack_from('<IIfB', buf, 4) == (1, 3, 4., 1)
    assert struct.unpack_from('<3f', buf, 17) == (1., 2., 3.)
    assert len(buf) == 17 + 12


def test_read_rejects_other_files(tmp_path):
    path = tmp_path / 'w.dcg'
    path.write_bytes(b'DCBW' + bytes(30))
    with pytest.raises(ContractError):
        gh.read_grid(str(path))


@pytest.mark.parametrize('cut', [6, 16, 20, -1])
def test_truncated_grid_is_a_contract_error(tmp_path, cut):
    path = tmp_path / 'g.dcg'
    gh.write_grid(str(path), gh.Grid(np.ones((3, 4))))
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(ContractError, match='g.dcg'):
        gh.read_grid(str(path))


def test_unknown_variable_code_is_a_contract_error(tmp_path):
    path = tmp_path / 'g.dcg'
    gh.write_grid(str(path), gh.Grid(np.ones((2, 2))))
    buf = bytearray(path.read_bytes())
    buf[16] = 9
    path.write_bytes(bytes(buf))
    with pytest.raises(ContractError, match='corrupt'):
        gh.read_grid(str(path))


def test_dataset_round_trip(tmp_path, rng):
    precip = [gh.Grid(rng.gamma(1., 2., size=(4, 4))) for _ in range(3)]
    elevation = gh.Grid(rng.normal(800., 50., size=(4, 4)), variable='elevation_m')
    gh.write_dataset(str(tmp_path), precip, elevation, days=[10, 11, 14])

    loaded, loaded_elevation, days = gh.read_dataset(str(tmp_path))
    assert days == [10, 11, 14]
    assert (tmp_path / 'precip' / 'manifest.txt').read_text().split() == \
        ['day_00010.dcg', 'day_00011.dcg', 'day_00014.dcg']
    for a, b in zip(loaded, precip):
        np.testing.assert_allclose(a.values, b.values, rtol=1e-6)
    np.testing.assert_allclose(loaded_elevation.values, elevation.values, rtol=1e-6)


def test_dataset_needs_manifest_and_elevation(tmp_path):
    with pytest.raises(ContractError):
        gh.read_dataset(str(tmp_path))
    gh.write_grid_sequence(str(tmp_path / 'precip'), [gh.Grid(np.zeros((2, 2)))], [0])
    with pytest.raises(ContractError):
        gh.read_dataset(str(tmp_path))


def test_dataarray(rng):
    grids = [gh.Grid(rng.uniform(size=(3, 2))) for _ in range(4)]
    da = gh.grids_to_dataarray(grids, [0, 1, 2, 5])
    assert da.dims == ('day', 'row', 'col')
    assert list(da['day'].values) == [0, 1, 2, 5]
    np.testing.assert_array_equal(da.sel(day=5).values, grids[3].values)


##############
# RESAMPLING #
##############
def test_block_mean():
    grid = gh.Grid(np.arange(16.).reshape(4, 4))
    coarse = gh.upscale_bilinear(grid, 2)
    np.testing.assert_array_equal(coarse.values, [[2.5, 4.5], [10.5, 12.5]])
    assert coarse.cell_size == 8.


def test_block_mean_preserves_mass(rng):
    grid = gh.Grid(rng.gamma(0.5, 4., size=(12, 8)))
    assert gh.upscale_bilinear(grid, 4).values.mean() == pytest.approx(grid.values.mean(), rel=1e-12)


@pytest.mark.parametrize('shape, factor', [((6, 6), 4), ((6, 6), 1), ((6, 6), 1.5)])
def test_upscale_errors(shape, factor):
    with pytest.raises(ContractError):
        gh.upscale_bilinear(gh.Grid(np.zeros(shape)), factor)


def test_interpolation_keeps_constants():
    fine = gh.interpolate_bilinear(gh.Grid(np.full((3, 4), 2.5)), 4)
    assert fine.shape == (12, 16)
    assert fine.cell_size == 1.
    np.testing.assert_allclose(fine.values, 2.5)


def test_interpolation_is_exact_for_ramps():
    factor = 4
    coarse = gh.Grid(np.tile(np.arange(5.), (3, 1)), variable='elevation_m')
    fine = gh.interpolate_bilinear(coarse, factor).values
    centres = (np.arange(20) + 0.5) / factor - 0.5
    np.testing.assert_allclose(fine[0], np.clip(centres, 0, 4), atol=1e-12)
    np.testing.assert_allclose(fine[:, 7], fine[0, 7])


def test_low_resolution_input_shape_and_mean(rng):
    grid = gh.Grid(rng.gamma(1., 3., size=(16, 16)))
    low = gh.low_resolution_input(grid, 4)
    assert low.shape == grid.shape
    assert low.variable == 'precip_mm_per_day'
    assert np.all(low.values >= 0)


###########
# PATCHES #
###########
def test_patch_offsets():
    assert gh.patch_offsets(10, 10, 4, 3) == [(r, c) for r in (0, 3, 6) for c in (0, 3, 6)]
    assert gh.patch_offsets(64, 64, 64, 48) == [(0, 0)]
    assert gh.patch_offsets(112, 112, 64, 48) == [(0, 0), (0, 48), (48, 0), (48, 48)]
    with pytest.raises(ContractError):
        gh.patch_offsets(10, 3, 4, 2)


def test_patches_are_aligned(rng):
    precip = rng.uniform(size=(10, 12))
    elevation = rng.uniform(size=(10, 12))
    label = rng.uniform(size=(10, 12))
    patches = gh.extract_patches([precip, elevation], label, size=4, stride=3, day=7)

    assert patches.inputs.shape == (9, 2, 4, 4)
    assert patches.labels.shape == (9, 1, 4, 4)
    for (day, r, c), x, y in zip(patches.offsets, patches.inputs, patches.labels):
        assert day == 7
        np.testing.assert_array_equal(x[0], precip[r:r + 4, c:c + 4])
        np.testing.assert_array_equal(x[1], elevation[r:r + 4, c:c + 4])
        np.testing.assert_array_equal(y[0], label[r:r + 4, c:c + 4])


def test_patch_concatenation(rng):
    a = gh.extract_patches(rng.uniform(size=(2, 8, 8)), rng.uniform(size=(8, 8)), size=4, stride=4, day=0)
    b = gh.extract_patches(rng.uniform(size=(2, 8, 8)), rng.uniform(size=(8, 8)), size=4, stride=4, day=1)
    both = gh.PatchSet.concatenate([a, b])
    assert len(both) == 8
    assert both.offsets[4] == (1, 0, 0)


def test_misaligned_patches():
    with pytest.raises(ContractError):
        gh.extract_patches(np.zeros((2, 8, 8)), np.zeros((8, 6)), size=4, stride=4)


#################
# NORMALIZATION #
#################
def test_precip_scale():
    assert gh.precip_scale_for('gaussian') == 0.01
    assert gh.precip_scale_for('dc_gaussian') == 0.01
    assert gh.precip_scale_for('dc_lognormal') == 1.


def test_normalizer_round_trip(rng):
    elevation = gh.Grid(rng.normal(1200., 300., size=(8, 8)), variable='elevation_m')
    norm = gh.Normalizer.fit(elevation, 'dc_gaussian')
    z = gh.normalize(elevation, norm)
    assert z.values.mean() == pytest.approx(0., abs=1e-10)
    assert z.values.std() == pytest.approx(1., rel=1e-10)
    np.testing.assert_allclose(gh.denormalize(z, norm).values, elevation.values)

    precip = gh.Grid([[0., 12.5]])
    np.testing.assert_allclose(norm.normalize(precip).values, [[0., 0.125]])
    np.testing.assert_allclose(norm.denormalize(norm.normalize(precip)).values, precip.values)
    assert gh.Normalizer.from_dict(norm.to_dict()).to_dict() == norm.to_dict()


def test_precip_scaling_of_gaussian_models():
    norm = gh.Normalizer.fit(gh.Grid([[0., 1.], [2., 3.]], variable='elevation_m'), 'gaussian')
    assert norm.normalize(gh.Grid([[100.]])).values[0, 0] == pytest.approx(1.)
    lognormal = gh.Normalizer.fit(gh.Grid([[0., 1.], [2., 3.]], variable='elevation_m'), 'dc_lognormal')
    assert lognormal.normalize(gh.Grid([[100.]])).values[0, 0] == pytest.approx(np.log(101.))


def test_lognormal_inputs_are_log1p_of_mm():
    norm = gh.Normalizer.fit(gh.Grid([[0., 1.], [2., 3.]], variable='elevation_m'), 'dc_lognormal')
    assert norm.log_precip and norm.precip_scale == 1.
    np.testing.assert_allclose(norm.precip_input([0., np.e - 1., -0.2]), [0., 1., 0.])
    precip = gh.Grid([[0., 0.4, 55.]])
    np.testing.assert_allclose(norm.denormalize(norm.normalize(precip)).values, precip.values, rtol=1e-12)
    restored = gh.Normalizer.from_dict(norm.to_dict())
    assert restored.log_precip
    assert not gh.Normalizer.from_dict({'precip_scale': 0.01, 'elevation_mean': 0., 'elevation_std': 1.}).log_precip


def test_flat_elevation_cannot_be_normalized():
    with pytest.raises(DomainError):
        gh.Normalizer.fit(gh.Grid(np.full((3, 3), 10.), variable='elevation_m'))


#############
# SYNTHETIC #
#############
def test_synthetic_is_reproducible():
    config = gh.SyntheticConfig(seed=11, height=16, width=16, n_days=3)
    a, elev_a = gh.generate_synthetic(config)
    b, elev_b = gh.generate_synthetic(config)
    np.testing.assert_array_equal(elev_a.values, elev_b.values)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


def test_synthetic_wet_fraction():
    precip, elevation = gh.generate_synthetic(gh.SyntheticConfig(seed=2, height=32, width=32, n_days=5,
                                                                 rain_fraction=0.25))
    assert elevation.variable == 'elevation_m'
    for grid in precip:
        assert grid.shape == (32, 32)
        assert np.all(grid.values >= 0)
        assert np.mean(grid.values > 0) == pytest.approx(0.25, abs=0.01)


@pytest.mark.parametrize('coeff, check', [(0., lambda r: abs(r) < 0.1), (2., lambda r: r > 0.5)])
def test_synthetic_elevation_effect(coeff, check):
    config = gh.SyntheticConfig(seed=4, height=48, width=48, n_days=60, elevation_coeff=coeff)
    precip, elevation = gh.generate_synthetic(config)
    elev_norm = (elevation.values - 1000.) / 500.
    log_intensity = []
    elev = []
    for grid in precip:
        wet = grid.values > 0
        log_intensity.append(np.log(grid.values[wet]))
        elev.append(elev_norm[wet])
    r = np.corrcoef(np.concatenate(elev), np.concatenate(log_intensity))[0, 1]
    assert check(r)


def test_synthetic_config_validation():
    with pytest.raises(DomainError):
        gh.SyntheticConfig(rain_fraction=1.)
    with pytest.raises(DomainError):
        gh.SyntheticConfig(intensity_sigma=0.)


def test_synthetic_intensities_are_right_skewed():
    precip, _ = gh.generate_synthetic(gh.SyntheticConfig(seed=9, height=32, width=32, n_days=20, intensity_sigma=0.8))
    wet = np.concatenate([grid.values[grid.values > 0] for grid in precip])
    assert stats.skew(wet) > 1.
