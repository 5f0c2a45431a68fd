"""
Grid IO, resampling, patch extraction, normalization and the synthetic discrete-continuous precipitation generator.

Grids are written in the DCG1 format (see README.md), one file per grid per day, with a manifest.txt listing the
day files of a sequence in chronological order.
"""
import os
import struct

import numpy as np
import xarray as xr
from scipy.ndimage import gaussian_filter

from dc_bdl_tools.Utils.errors import ContractError, DomainError

DCG_MAGIC = b'DCG1'
# 'derived' holds any finite per-pixel field: predictive moments, parameters, metric maps
VARIABLE_CODES = {'precip_mm_per_day': 0, 'elevation_m': 1, 'derived': 2}
VARIABLE_NAMES = {v: k for k, v in VARIABLE_CODES.items()}

# precipitation is multiplied by this for the Gaussian-likelihood pathways
GAUSSIAN_PRECIP_SCALE = 0.01


class Grid(object):
    """
    A 2-d field of one physical variable, indexed by (row, col).

    Parameters
    ----------
    values: array
        [height, width]
    cell_size: float
        Grid spacing in km.
    variable: str
        'precip_mm_per_day', 'elevation_m' or 'derived'
    """

    def __init__(self, values, cell_size=4., variable='precip_mm_per_day'):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ContractError('a grid must be a non-empty 2-d array, got shape {}'.format(values.shape))
        if variable not in VARIABLE_CODES:
            raise ContractError('unknown grid variable {}'.format(variable))
        if not np.all(np.isfinite(values)):
            raise DomainError('{} grid has non-finite values'.format(variable))
        if variable == 'precip_mm_per_day' and np.any(values < 0):
            raise DomainError('precipitation grid has negative values')
        self.values = values
        self.cell_size = float(cell_size)
        self.variable = variable

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


##########
# DCG1 IO #
##########
def write_grid(path, grid):
    """Write one grid as DCG1: magic, u32 height, u32 width, f32 cell size, u8 variable, f32 values."""
    header = DCG_MAGIC + struct.pack('<IIfB', grid.height, grid.width, grid.cell_size, VARIABLE_CODES[grid.variable])
    with open(path, 'wb') as f:
        f.write(header + np.ascontiguousarray(grid.values, dtype='<f4').tobytes())


def read_grid(path):
    with open(path, 'rb') as f:
        buf = f.read()
    if buf[:4] != DCG_MAGIC:
        raise ContractError('{} is not a DCG1 grid'.format(path))
    try:
        height, width, cell_size, code = struct.unpack_from('<IIfB', buf, 4)
        variable = VARIABLE_NAMES[code]
    except (struct.error, KeyError) as e:
        raise ContractError('{} has a corrupt DCG1 header: {}: {}'.format(path, type(e).__name__, e))
    expected = 17 + 4 * height * width
    if len(buf) != expected:
        raise ContractError('{} holds {} bytes, a {}x{} grid needs {}'.format(path, len(buf), height, width,
                                                                              expected))
    values = np.frombuffer(buf, dtype='<f4', count=height * width, offset=17).reshape(height, width)
    return Grid(values.astype(float), cell_size, variable)


def write_manifest(directory, file_names):
    """One path per line (relative to directory), chronological order."""
    with open(os.path.join(directory, 'manifest.txt'), 'w') as f:
        f.write(''.join(name + '\n' for name in file_names))


def read_manifest(directory):
    manifest = os.path.join(directory, 'manifest.txt')
    if not os.path.exists(manifest):
        raise ContractError('no manifest.txt in {}'.format(directory))
    with open(manifest) as f:
        return [os.path.join(directory, line.strip()) for line in f if line.strip()]


def day_file_name(day):
    return 'day_{:05d}.dcg'.format(day)


def day_from_file_name(path):
    return int(os.path.basename(path).split('_')[1].split('.')[0])


def write_grid_sequence(directory, grids, days):
    """Write a list of daily grids into directory with a manifest."""
    if not os.path.exists(directory):
        os.makedirs(directory)
    names = []
    for day, grid in zip(days, grids):
        names.append(day_file_name(day))
        write_grid(os.path.join(directory, names[-1]), grid)
    write_manifest(directory, names)


def read_grid_sequence(directory):
    """
    Returns
    -------
    grids: list of Grid
    days: list of int
    """
    paths = read_manifest(directory)
    return [read_grid(p) for p in paths], [day_from_file_name(p) for p in paths]


def write_dataset(directory, precip_grids, elevation, days=None):
    """
    Write a dataset: precip/ (daily grids plus manifest) and elevation.dcg.
    """
    days = list(range(len(precip_grids))) if days is None else list(days)
    write_grid_sequence(os.path.join(directory, 'precip'), precip_grids, days)
    write_grid(os.path.join(directory, 'elevation.dcg'), elevation)


def read_dataset(directory):
    """
    Returns
    -------
    precip_grids: list of Grid
    elevation: Grid
    days: list of int
    """
    precip, days = read_grid_sequence(os.path.join(directory, 'precip'))
    elevation_file = os.path.join(directory, 'elevation.dcg')
    if not os.path.exists(elevation_file):
        raise ContractError('no elevation.dcg in {}'.format(directory))
    return precip, read_grid(elevation_file), days


def grids_to_dataarray(grids, days, name='precip'):
    """Stack daily grids into an xarray.DataArray with dims (day, row, col)."""
    return xr.DataArray(np.stack([g.values for g in grids]), dims=('day', 'row', 'col'),
                        coords={'day': np.asarray(days)}, name=name)


##############
# RESAMPLING #
##############
def upscale_bilinear(grid, factor):
    """
    Coarsen a grid by an integer factor with block means. Mass is preserved: the coarse mean equals the fine mean.
    Use interpolate_bilinear to bring the coarse field back onto the fine grid.
    """
    if int(factor) != factor or factor < 2:
        raise ContractError('upscale factor must be an integer >= 2, got {}'.format(factor))
    factor = int(factor)
    if grid.height % factor or grid.width % factor:
        raise ContractError('grid {} is not divisible by factor {}'.format(grid.shape, factor))
    blocks = grid.values.reshape(grid.height // factor, factor, grid.width // factor, factor)
    return Grid(blocks.mean(axis=(1, 3)), grid.cell_size * factor, grid.variable)


def _bilinear_coords(n_fine, factor, n_coarse):
    # centre of fine cell i in coarse index units, clamped to the outermost coarse centres
    src = (np.arange(n_fine) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n_coarse - 1)
    i0 = np.minimum(np.floor(src).astype(int), max(n_coarse - 2, 0))
    i1 = np.minimum(i0 + 1, n_coarse - 1)
    return i0, i1, src - i0


def interpolate_bilinear(coarse, factor):
    """
    Bilinear interpolation of a coarse grid onto the grid `factor` times finer. Cell centres are aligned: fine cell
    i sits at coarse coordinate (i + 0.5) / factor - 0.5, clamped at the edges.
    """
    factor = int(factor)
    r0, r1, wr = _bilinear_coords(coarse.height * factor, factor, coarse.height)
    c0, c1, wc = _bilinear_coords(coarse.width * factor, factor, coarse.width)
    v = coarse.values
    wr = wr[:, None]
    wc = wc[None, :]
    top = v[r0][:, c0] * (1 - wc) + v[r0][:, c1] * wc
    bottom = v[r1][:, c0] * (1 - wc) + v[r1][:, c1] * wc
    return Grid(top * (1 - wr) + bottom * wr, coarse.cell_size / factor, coarse.variable)


def low_resolution_input(grid, factor):
    """The model input for a high resolution grid: block-mean coarsening then bilinear return to the fine grid."""
    return interpolate_bilinear(upscale_bilinear(grid, factor), factor)


###########
# PATCHES #
###########
class PatchSet(object):
    """
    Aligned (input stack, label) patches.

    Attributes
    ----------
    inputs: array
        [n, channels, size, size]
    labels: array
        [n, 1, size, size]
    offsets: list of (day, row, col)
    patch_size, stride: int
    """

    def __init__(self, inputs, labels, offsets, patch_size, stride):
        if inputs.shape[0] != labels.shape[0]:
            raise ContractError('got {} input patches but {} labels'.format(inputs.shape[0], labels.shape[0]))
        self.inputs = inputs
        self.labels = labels
        self.offsets = offsets
        self.patch_size = patch_size
        self.stride = stride

    def __len__(self):
        return self.inputs.shape[0]

    @classmethod
    def concatenate(cls, patch_sets):
        if not patch_sets:
            raise ContractError('nothing to concatenate')
        first = patch_sets[0]
        return cls(np.concatenate([p.inputs for p in patch_sets]), np.concatenate([p.labels for p in patch_sets]),
                   [o for p in patch_sets for o in p.offsets], first.patch_size, first.stride)


def patch_offsets(height, width, size, stride):
    """Row-major top-left corners of all patches fully inside a height x width grid."""
    if height < size or width < size:
        raise ContractError('grid {}x{} is smaller than the patch size {}'.format(height, width, size))
    rows = range(0, height - size + 1, stride)
    cols = range(0, width - size + 1, stride)
    return [(r, c) for r in rows for c in cols]


def extract_patches(input_grids, label_grid, size=64, stride=48, day=0):
    """
    Cut aligned patches from a stack of input grids and a label grid.

    Parameters
    ----------
    input_grids: list of Grid or array
        Channels of the model input; a [channels, H, W] array is accepted too.
    label_grid: Grid or array
    size, stride: int
    day: int
        Recorded in the patch offsets.

    Returns
    -------
    PatchSet
    """
    if isinstance(input_grids, np.ndarray):
        stack = input_grids
    else:
        stack = np.stack([g.values if isinstance(g, Grid) else np.asarray(g) for g in input_grids])
    label = label_grid.values if isinstance(label_grid, Grid) else np.asarray(label_grid)
    if stack.shape[1:] != label.shape:
        raise ContractError('inputs {} and label {} are not aligned'.format(stack.shape[1:], label.shape))

    offsets = patch_offsets(label.shape[0], label.shape[1], size, stride)
    inputs = np.stack([stack[:, r:r + size, c:c + size] for r, c in offsets])
    labels = np.stack([label[None, r:r + size, c:c + size] for r, c in offsets])
    return PatchSet(inputs, labels, [(day, r, c) for r, c in offsets], size, stride)


#################
# NORMALIZATION #
#################
def precip_scale_for(model_tag):
    """The Gaussian pathways train on precipitation / 100; the lognormal pathway on raw mm targets."""
    return 1. if model_tag == 'dc_lognormal' else GAUSSIAN_PRECIP_SCALE


class Normalizer(object):
    """
    Scaling constants of the model inputs. Elevation is standardized with statistics computed over all of its cells.
    Precipitation is multiplied by precip_scale, or with log_precip mapped to log(1 + mm), the scale of the lognormal
    location.
    """

    def __init__(self, precip_scale=GAUSSIAN_PRECIP_SCALE, elevation_mean=0., elevation_std=1., log_precip=False):
        if elevation_std <= 0:
            raise DomainError('elevation standard deviation must be positive')
        self.precip_scale = precip_scale
        self.log_precip = bool(log_precip)
        self.elevation_mean = elevation_mean
        self.elevation_std = elevation_std

    @classmethod
    def fit(cls, elevation, model_tag='gaussian'):
        values = elevation.values if isinstance(elevation, Grid) else np.asarray(elevation)
        std = float(values.std())
        if std == 0:
            raise DomainError('elevation has zero standard deviation; cannot normalize')
        return cls(precip_scale_for(model_tag), float(values.mean()), std, log_precip=model_tag == 'dc_lognormal')

    def precip_input(self, mm):
        """Network input channel of precipitation given in mm."""
        mm = np.asarray(mm)
        if self.log_precip:
            return np.log1p(np.maximum(mm, 0.))
        return mm * self.precip_scale

    def normalize(self, grid):
        if grid.variable == 'precip_mm_per_day':
            return Grid(self.precip_input(grid.values), grid.cell_size, grid.variable)
        return Grid((grid.values - self.elevation_mean) / self.elevation_std, grid.cell_size, grid.variable)

    def denormalize(self, grid):
        if grid.variable == 'precip_mm_per_day':
            mm = np.expm1(grid.values) if self.log_precip else grid.values / self.precip_scale
            return Grid(mm, grid.cell_size, grid.variable)
        return Grid(grid.values * self.elevation_std + self.elevation_mean, grid.cell_size, grid.variable)

    def to_dict(self):
        return {'precip_scale': self.precip_scale, 'elevation_mean': self.elevation_mean,
                'elevation_std': self.elevation_std, 'log_precip': self.log_precip}

    @classmethod
    def from_dict(cls, d):
        return cls(d['precip_scale'], d['elevation_mean'], d['elevation_std'], d.get('log_precip', False))


def normalize(grid, normalizer):
    return normalizer.normalize(grid)


def denormalize(grid, normalizer):
    return normalizer.denormalize(grid)


#############
# SYNTHETIC #
#############
class SyntheticConfig(object):
    """
    Settings of the synthetic precipitation generator.

    Parameters
    ----------
    seed: int
    height, width: int
    n_days: int
    correlation_length: float
        Standard deviation, in cells, of the Gaussian smoothing kernel applied to white noise.
    rain_fraction: float
        Target fraction of wet cells per day.
    intensity_mu, intensity_sigma: float
        Log-scale location and spread of wet-cell intensities.
    elevation_coeff: float
        Effect of normalized elevation on log intensity.
    cell_size: float
        km
    """

    def __init__(self, seed=0, height=64, width=64, n_days=100, correlation_length=4., rain_fraction=0.3,
                 intensity_mu=1.5, intensity_sigma=0.8, elevation_coeff=0.3, cell_size=4.):
        if not 0 < rain_fraction < 1:
            raise DomainError('rain fraction must be inside (0, 1), got {}'.format(rain_fraction))
        if intensity_sigma <= 0:
            raise DomainError('intensity sigma must be positive, got {}'.format(intensity_sigma))
        self.seed = seed
        self.height = height
        self.width = width
        self.n_days = n_days
        self.correlation_length = correlation_length
        self.rain_fraction = rain_fraction
        self.intensity_mu = intensity_mu
        self.intensity_sigma = intensity_sigma
        self.elevation_coeff = elevation_coeff
        self.cell_size = cell_size


def _smooth_standard_field(rng, shape, correlation_length):
    field = gaussian_filter(rng.standard_normal(shape), sigma=correlation_length, mode='wrap')
    return (field - field.mean()) / field.std()


def generate_synthetic(config):
    """
    Daily high resolution precipitation and a static elevation field.

    Each day a smoothed latent field g decides where it rains (the top rain_fraction of cells) and an independent
    smoothed field g' sets the intensity exp(mu + sigma g' + coeff * elevation_normalized).

    Returns
    -------
    precip_grids: list of Grid
    elevation: Grid
    """
    rng = np.random.default_rng(config.seed)
    shape = (config.height, config.width)

    elev_norm = _smooth_standard_field(rng, shape, 2 * config.correlation_length)
    elevation = Grid(1000. + 500. * elev_norm, config.cell_size, 'elevation_m')

    precip = []
    for _ in range(config.n_days):
        g = _smooth_standard_field(rng, shape, config.correlation_length)
        g_prime = _smooth_standard_field(rng, shape, config.correlation_length)
        wet = g > np.quantile(g, 1. - config.rain_fraction)
        intensity = np.exp(config.intensity_mu + config.intensity_sigma * g_prime + config.elevation_coeff * elev_norm)
        precip.append(Grid(np.where(wet, intensity, 0.), config.cell_size, 'precip_mm_per_day'))
    return precip, elevation
