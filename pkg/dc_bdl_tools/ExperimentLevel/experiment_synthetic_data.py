import os
import numpy as np
import xarray as xr

from dc_bdl_tools.Utils import grid_helpers
from dc_bdl_tools.Utils import autodiff as ad
from dc_bdl_tools.Utils.errors import ConfigError, ContractError
from dc_bdl_tools.experiment import ExperimentDataBase


class ExperimentSyntheticData(ExperimentDataBase):
    """
    Subclass of ExperimentDataBase for loading/saving gridded daily precipitation with a static elevation field.

    The data come either from a DCG1 dataset on disk (.data_dir) or from the synthetic discrete-continuous
    generator. In both cases the low resolution model input is derived from the high resolution field by block-mean
    coarsening followed by bilinear interpolation back onto the fine grid.

    # directory of a DCG1 dataset (precip/ and elevation.dcg). If None, data are generated.
    self.data_dir = None

    # synthetic generator settings, see grid_helpers.SyntheticConfig
    self.synthetic_seed = 0
    self.height = 64
    self.width = 64
    self.n_days = 100
    self.correlation_length = 4.
    self.rain_fraction = 0.3
    self.intensity_mu = 1.5
    self.intensity_sigma = 0.8
    self.elevation_coeff = 0.3
    self.cell_size = 4.

    # coarsening factor of the low resolution input
    self.upscale_factor = 4

    # training patches
    self.patch_size = 64
    self.stride = 48

    # the last test_fraction of days are held out
    self.test_fraction = 0.2

    # used to group days into years for the climate indices
    self.days_per_year = 365
    """

    # Automatically set up the save directory path based on this design. See properties at the end of file. Any time
    # one of these attributes is modified, the save path will be automatically updated.
    save_str_tmp = '{0}/{1}/{2}/{3:d}x{4:d}_{5:d}_days_x{6:d}/data'
    attrs_in_save_str = ['base_dir', 'dataset', 'data_dir', 'synthetic_seed', 'height', 'width', 'n_days',
                         'upscale_factor']

    def __init__(self, dataset=None, model='gaussian', seed=0):
        super(ExperimentSyntheticData, self).__init__(dataset=dataset, model=model, seed=seed)

        # directory of a DCG1 dataset (precip/ and elevation.dcg). If None, data are generated.
        self.data_dir = None

        # synthetic generator settings
        self.synthetic_seed = 0
        self.height = 64
        self.width = 64
        self.n_days = 100
        self.correlation_length = 4.
        self.rain_fraction = 0.3
        self.intensity_mu = 1.5
        self.intensity_sigma = 0.8
        self.elevation_coeff = 0.3
        self.cell_size = 4.

        # coarsening factor of the low resolution input
        self.upscale_factor = 4

        # training patches
        self.patch_size = 64
        self.stride = 48

        # the last test_fraction of days are held out
        self.test_fraction = 0.2

        # used to group days into years for the climate indices
        self.days_per_year = 365

    def synthetic_config(self):
        return grid_helpers.SyntheticConfig(seed=self.synthetic_seed, height=self.height, width=self.width,
                                            n_days=self.n_days, correlation_length=self.correlation_length,
                                            rain_fraction=self.rain_fraction, intensity_mu=self.intensity_mu,
                                            intensity_sigma=self.intensity_sigma,
                                            elevation_coeff=self.elevation_coeff, cell_size=self.cell_size)

    def compute_data(self):
        """
        Reads or generates the high resolution grids and derives the low resolution input.

        Returns a dictionary of xarray.DataArrays: precip_hr and precip_lr (day x row x col) and elevation
        (row x col).
        """
        if self.data_dir is not None:
            print('%s: reading dataset from %s.' % (self.dataset, self.data_dir))
            precip, elevation, days = grid_helpers.read_dataset(self.data_dir)
        else:
            print('%s: generating %d synthetic days.' % (self.dataset, self.n_days))
            precip, elevation = grid_helpers.generate_synthetic(self.synthetic_config())
            days = list(range(len(precip)))

        if not precip:
            raise ContractError('dataset holds no days')
        for grid in precip:
            if grid.shape != elevation.shape:
                raise ContractError('precipitation grid {} and elevation {} are not aligned'.format(
                    grid.shape, elevation.shape))

        precip_lr = [grid_helpers.low_resolution_input(g, self.upscale_factor) for g in precip]
        hr = grid_helpers.grids_to_dataarray(precip, days, name='precip_hr')
        lr = grid_helpers.grids_to_dataarray(precip_lr, days, name='precip_lr')
        elev = xr.DataArray(elevation.values, dims=('row', 'col'), name='elevation')
        for arr in (hr, lr, elev):
            arr.attrs['cell_size'] = elevation.cell_size
        return {'precip_hr': hr, 'precip_lr': lr, 'elevation': elev}

    ################################################################################
    # DATA HELPERS - splits, model inputs and patches used by the training and      #
    # prediction analyses                                                           #
    ################################################################################
    @property
    def days(self):
        return self.experiment_data['precip_hr'].day.values

    def train_days(self):
        """The chronologically first days, everything not held out for testing."""
        days = self.days
        n_test = int(np.floor(len(days) * self.test_fraction))
        return days[:len(days) - n_test]

    def test_days(self):
        days = self.days
        n_test = int(np.floor(len(days) * self.test_fraction))
        if n_test == 0:
            return days
        return days[len(days) - n_test:]

    def days_of(self, split):
        """Days of a split: 'test', 'train' or 'all'."""
        if split == 'test':
            return self.test_days()
        if split == 'train':
            return self.train_days()
        if split == 'all':
            return self.days
        raise ConfigError('unknown day split {!r}, expected test, train or all'.format(split))

    def elevation_grid(self):
        elev = self.experiment_data['elevation']
        return grid_helpers.Grid(elev.values, elev.attrs.get('cell_size', self.cell_size), 'elevation_m')

    @property
    def normalizer(self):
        return grid_helpers.Normalizer.fit(self.elevation_grid(), self.model)

    def model_inputs(self, days=None, normalizer=None):
        """
        Normalized network input for the given days.

        Returns
        -------
        numpy.ndarray
            [n_days, 2, H, W]: low resolution precipitation (Normalizer.precip_input) and standardized elevation.
        """
        normalizer = self.normalizer if normalizer is None else normalizer
        days = self.days if days is None else days
        lr = self.experiment_data['precip_lr'].sel(day=days).values
        elev = normalizer.normalize(self.elevation_grid()).values
        inputs = np.empty((lr.shape[0], 2) + lr.shape[1:], dtype=ad.get_dtype())
        inputs[:, 0] = normalizer.precip_input(lr)
        inputs[:, 1] = elev[None]
        return inputs

    def observations(self, days=None):
        """High resolution precipitation in mm, [n_days, H, W]."""
        days = self.days if days is None else days
        return self.experiment_data['precip_hr'].sel(day=days).values

    def patch_set(self, days=None, normalizer=None):
        """
        Aligned (input, label) patches over the training days. Labels are kept in mm so the wet/dry threshold is
        always applied to raw precipitation.
        """
        days = self.train_days() if days is None else days
        inputs = self.model_inputs(days, normalizer)
        labels = self.observations(days)
        return grid_helpers.PatchSet.concatenate([
            grid_helpers.extract_patches(x, y, size=self.patch_size, stride=self.stride, day=int(d))
            for x, y, d in zip(inputs, labels, days)])

    def dataset_size(self, days=None):
        """N = days x height x width of the training targets."""
        days = self.train_days() if days is None else days
        return len(days) * self.experiment_data['precip_hr'].shape[1] * self.experiment_data['precip_hr'].shape[2]

    ###################################################################################
    # dynamically update the data save location of we change the following attributes #
    ###################################################################################
    @property
    def base_dir(self):
        return self._base_dir

    @base_dir.setter
    def base_dir(self, x):
        self._base_dir = x
        self._update_save_path()

    @property
    def dataset(self):
        return self._dataset

    @dataset.setter
    def dataset(self, x):
        self._dataset = x
        self._update_save_path()

    @property
    def data_dir(self):
        return self._data_dir

    @data_dir.setter
    def data_dir(self, x):
        self._data_dir = x
        self._update_save_path()

    @property
    def synthetic_seed(self):
        return self._synthetic_seed

    @synthetic_seed.setter
    def synthetic_seed(self, x):
        self._synthetic_seed = x
        self._update_save_path()

    @property
    def height(self):
        return self._height

    @height.setter
    def height(self, x):
        self._height = x
        self._update_save_path()

    @property
    def width(self):
        return self._width

    @width.setter
    def width(self, x):
        self._width = x
        self._update_save_path()

    @property
    def n_days(self):
        return self._n_days

    @n_days.setter
    def n_days(self, x):
        self._n_days = x
        self._update_save_path()

    @property
    def upscale_factor(self):
        return self._upscale_factor

    @upscale_factor.setter
    def upscale_factor(self, x):
        self._upscale_factor = x
        self._update_save_path()

    def _update_save_path(self):
        if np.all([hasattr(self, x) for x in ExperimentSyntheticData.attrs_in_save_str]):
            source = 'synthetic_{}'.format(self.synthetic_seed) if self.data_dir is None else \
                os.path.basename(os.path.normpath(self.data_dir))
            self.save_dir = self.save_str_tmp.format(self.base_dir, self.dataset, source, int(self.height),
                                                     int(self.width), int(self.n_days), int(self.upscale_factor))
            self.save_file = os.path.join(self.save_dir, 'experiment_data.p')
