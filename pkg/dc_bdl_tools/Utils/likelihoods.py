"""
Likelihood heads for precipitation downscaling networks.

Three observation models are supported, identified by a model tag:

    gaussian      y ~ N(y_hat, sigma^2)
    dc_gaussian   dry with probability 1 - p, otherwise y ~ N(y_hat, sigma^2)
    dc_lognormal  dry with probability 1 - p, otherwise log y ~ N(mu, sigma^2)

The network emits an unconstrained s with sigma^2 = exp(s) and, for the discrete-continuous (hurdle) models, a rain
logit phi with p = sigmoid(phi). This module holds the training losses (autodiff tensors), the Monte Carlo moment
estimators over dropout passes, lognormal moment matching, and predictive CDFs, quantiles and densities.
"""
import logging
import warnings

import numpy as np
from scipy.special import expit, log_expit, logsumexp
from scipy.stats import norm

from dc_bdl_tools.Utils import autodiff as ad
from dc_bdl_tools.Utils.errors import ContractError, DomainError, NonFiniteError

logger = logging.getLogger(__name__)

MODEL_TAGS = ('gaussian', 'dc_gaussian', 'dc_lognormal')
DC_MODELS = ('dc_gaussian', 'dc_lognormal')
CDF_MODES = ('moment_matched', 'mc_mixture')

# mm/day. Days at or below this are the dry atom.
RAIN_THRESHOLD = 0.5

# below this rain probability the predictive distribution collapses to the dry atom
MIN_RAIN_PROB = 1e-6

LOG_2PI = np.log(2 * np.pi)


def check_model_tag(model_tag):
    if model_tag not in MODEL_TAGS:
        raise ContractError('unknown model tag {}, expected one of {}'.format(model_tag, MODEL_TAGS))
    return model_tag


def is_wet(y, rain_threshold=RAIN_THRESHOLD):
    """Rainy observations in mm. Everything at or below the threshold, 0.5 mm included, is the dry atom."""
    return np.asarray(y, dtype=float) > rain_threshold


def _values(x):
    return x.data if isinstance(x, ad.Tensor) else np.asarray(x)


class HeadOutput(object):
    """
    Per-pixel outputs of one forward pass.

    Parameters
    ----------
    location: Tensor or array
        y_hat for the Gaussian models, mu (log scale) for dc_lognormal.
    s: Tensor or array
        Log variance.
    phi: Tensor, array or None
        Rain logit. None for the plain Gaussian.
    model_tag: str
    """

    def __init__(self, location, s, phi=None, model_tag='gaussian'):
        check_model_tag(model_tag)
        if (phi is None) != (model_tag == 'gaussian'):
            raise ContractError('{} head {} a rain logit'.format(model_tag,
                                                                  'needs' if phi is None else 'does not take'))
        self.location = location
        self.s = s
        self.phi = phi
        self.model_tag = model_tag

    @property
    def variance(self):
        return np.exp(_values(self.s))

    @property
    def rain_prob(self):
        if self.phi is None:
            return np.ones_like(_values(self.location))
        return expit(_values(self.phi))


class McPassSet(object):
    """
    Head outputs of T stochastic forward passes over the same input, stacked on a leading pass axis.

    Parameters
    ----------
    location, s, phi: array
        [T, ...] arrays. phi is None for the plain Gaussian.
    model_tag: str
    precip_scale: float
        Factor the precipitation was multiplied by for training (0.01 for the Gaussian pathways). Moments and CDFs
        are reported in mm after undoing it, see in_mm().
    """

    def __init__(self, location, s, phi=None, model_tag='gaussian', precip_scale=1.):
        check_model_tag(model_tag)
        location = np.asarray(location, dtype=float)
        s = np.asarray(s, dtype=float)
        if location.ndim == 0 or location.shape[0] < 1:
            raise ContractError('a pass set needs at least one pass')
        if s.shape != location.shape:
            raise ContractError('location and s shapes differ: {} vs {}'.format(location.shape, s.shape))
        if (phi is None) != (model_tag == 'gaussian'):
            raise ContractError('{} passes {} rain logits'.format(model_tag,
                                                                   'need' if phi is None else 'do not take'))
        if phi is not None:
            phi = np.asarray(phi, dtype=float)
            if phi.shape != location.shape:
                raise ContractError('phi shape {} differs from location {}'.format(phi.shape, location.shape))
        self.location = location
        self.s = s
        self.phi = phi
        self.model_tag = model_tag
        self.precip_scale = precip_scale

    @classmethod
    def from_heads(cls, heads, precip_scale=1.):
        """Stack a list of HeadOutput objects sharing a model tag and shape."""
        if not heads:
            raise ContractError('a pass set needs at least one pass')
        tags = {h.model_tag for h in heads}
        if len(tags) != 1:
            raise ContractError('all passes must share a model tag, got {}'.format(sorted(tags)))
        model_tag = tags.pop()
        phi = None if model_tag == 'gaussian' else np.stack([_values(h.phi) for h in heads])
        return cls(np.stack([_values(h.location) for h in heads]), np.stack([_values(h.s) for h in heads]), phi,
                   model_tag, precip_scale)

    @property
    def T(self):
        return self.location.shape[0]

    @property
    def variance(self):
        return np.exp(self.s)

    @property
    def rain_prob(self):
        if self.phi is None:
            return np.ones_like(self.location)
        return expit(self.phi)

    def in_mm(self):
        """
        The same passes with the precipitation scaling undone: Y_mm = Y / precip_scale.
        """
        if self.precip_scale == 1:
            return self
        log_scale = np.log(self.precip_scale)
        if self.model_tag == 'dc_lognormal':
            return McPassSet(self.location - log_scale, self.s, self.phi, self.model_tag, 1.)
        return McPassSet(self.location / self.precip_scale, self.s - 2 * log_scale, self.phi, self.model_tag, 1.)


class PredictiveDistribution(object):
    """
    Per-pixel predictive distribution in mm/day.

    Attributes
    ----------
    mean, variance, rain_prob, second_moment: arrays
    matched_params: tuple of arrays
        (m, v) of the matched Gaussian for the Gaussian models, (mu, sigma) of the matched lognormal for dc_lognormal.
        For the hurdle models these describe the rainy part only.
    model_tag: str
    cdf_mode: str
        'moment_matched' or 'mc_mixture'
    aleatoric, epistemic: arrays or None
        Variance split for the Gaussian models.
    """

    def __init__(self, mean, variance, rain_prob, second_moment, matched_params, model_tag,
                 cdf_mode='moment_matched', aleatoric=None, epistemic=None):
        check_model_tag(model_tag)
        if cdf_mode not in CDF_MODES:
            raise ContractError('unknown cdf mode {}, expected one of {}'.format(cdf_mode, CDF_MODES))
        self.mean = mean
        self.variance = variance
        self.rain_prob = rain_prob
        self.second_moment = second_moment
        self.matched_params = matched_params
        self.model_tag = model_tag
        self.cdf_mode = cdf_mode
        self.aleatoric = aleatoric
        self.epistemic = epistemic

    @property
    def shape(self):
        return np.shape(self.mean)

    def fields(self):
        """Name -> grid for every per-pixel field, in a fixed order."""
        first, second = ('mu', 'sigma') if self.model_tag == 'dc_lognormal' else ('m', 'v')
        res = {'E': self.mean, 'Var': self.variance, 'p': self.rain_prob, 'E2': self.second_moment,
               first: self.matched_params[0], second: self.matched_params[1]}
        return res


##########
# LOSSES #
##########
def _check_head(head, model_tag):
    if head.model_tag != model_tag:
        raise ContractError('expected a {} head, got {}'.format(model_tag, head.model_tag))


def _check_target(y, head):
    y = np.asarray(y, dtype=ad.get_dtype())
    if not np.all(np.isfinite(y)):
        bad = np.argwhere(~np.isfinite(y))[0]
        raise NonFiniteError('target', tuple(bad))
    if y.shape != _values(head.location).shape:
        raise ContractError('target shape {} does not match head shape {}'.format(y.shape,
                                                                                _values(head.location).shape))
    return y


def _wet_mask(y, rain_threshold, wet):
    if wet is None:
        return is_wet(y, rain_threshold).astype(ad.get_dtype())
    wet = np.asarray(wet)
    if wet.shape != y.shape:
        raise ContractError('wet mask shape {} does not match target {}'.format(wet.shape, y.shape))
    return wet.astype(ad.get_dtype())


def mse_loss(prediction, target):
    """
    Baseline loss (1 / 2N) sum_n ||F(X_n) - Y_n||^2, N being the batch size (leading axis).
    """
    target = np.asarray(target, dtype=ad.get_dtype())
    prediction = ad.as_tensor(prediction)
    if prediction.shape != target.shape:
        raise ContractError('prediction shape {} does not match target {}'.format(prediction.shape, target.shape))
    n = target.shape[0] if target.ndim else 1
    return ad.mul(0.5 / n, ad.sum_all(ad.square(ad.sub(prediction, target))))


def gaussian_nll(y, head):
    """
    (1 / 2D) sum_i [exp(-s_i) (y_i - y_hat_i)^2 + s_i], D the number of pixels.
    """
    _check_head(head, 'gaussian')
    y = _check_target(y, head)
    sq_err = ad.square(ad.sub(y, head.location))
    return ad.mul(0.5, ad.mean_all(ad.add(ad.mul(ad.exp(ad.neg(head.s)), sq_err), head.s)))


def _hurdle_nll(wet, log_p, log_1mp, residual, s):
    # wet pixels: log p - 1/2 exp(-s) r^2 - 1/2 s ; dry pixels: log(1 - p)
    cont = ad.sub(log_p, ad.mul(0.5, ad.add(ad.mul(ad.exp(ad.neg(s)), ad.square(residual)), s)))
    ll = ad.add(ad.mul(wet, cont), ad.mul(1. - wet, log_1mp))
    return ad.neg(ad.mean_all(ll))


def dc_gaussian_nll(y, head, rain_threshold=RAIN_THRESHOLD, wet=None):
    """
    Discrete-continuous Gaussian loss, constants dropped:

        -(1/D) [ sum_{wet} (log p_i - 1/2 exp(-s_i) (y_i - y_hat_i)^2 - 1/2 s_i) + sum_{dry} log(1 - p_i) ]

    Parameters
    ----------
    y: array
        Targets, in the same units as the head location.
    head: HeadOutput
    rain_threshold: float
        Targets above this are wet. Ignored when wet is given.
    wet: array of bool, optional
        Precomputed wet mask, used when the threshold has to be applied in raw mm to scaled targets.
    """
    _check_head(head, 'dc_gaussian')
    y = _check_target(y, head)
    w = _wet_mask(y, rain_threshold, wet)
    return _hurdle_nll(w, ad.log_sigmoid(head.phi), ad.log_sigmoid(ad.neg(head.phi)),
                       ad.sub(y, head.location), head.s)


def dc_lognormal_nll(y, head, rain_threshold=RAIN_THRESHOLD, wet=None):
    """
    Discrete-continuous lognormal loss. As dc_gaussian_nll with the residual taken on log y; the -log y density
    term does not depend on the parameters and is left out (full_nll includes it).
    """
    _check_head(head, 'dc_lognormal')
    y = _check_target(y, head)
    w = _wet_mask(y, rain_threshold, wet)
    if np.any((w > 0) & (y <= 0)):
        raise DomainError('rainy pixel with non-positive precipitation')
    log_y = np.where(w > 0, np.log(np.where(w > 0, y, 1)), 0).astype(ad.get_dtype())
    return _hurdle_nll(w, ad.log_sigmoid(head.phi), ad.log_sigmoid(ad.neg(head.phi)),
                       ad.sub(log_y, head.location), head.s)


def nll(y, head, rain_threshold=RAIN_THRESHOLD, wet=None):
    """Training loss for whichever model the head belongs to."""
    if head.model_tag == 'gaussian':
        return gaussian_nll(y, head)
    elif head.model_tag == 'dc_gaussian':
        return dc_gaussian_nll(y, head, rain_threshold, wet)
    return dc_lognormal_nll(y, head, rain_threshold, wet)


############################
# MONTE CARLO MOMENTS #
############################
def _check_passes(passes, model_tag):
    if passes.model_tag != model_tag:
        raise ContractError('expected {} passes, got {}'.format(model_tag, passes.model_tag))
    if passes.T < 1:
        raise ContractError('need at least one pass')


def _clamp_variance(var, second_moment):
    """E2 - E^2 can dip below zero by rounding; larger negatives get a warning. Both are clamped to 0."""
    bad = var < -1e-6 * np.abs(second_moment)
    if np.any(bad):
        warnings.warn('{} pixels had a negative predictive variance beyond rounding noise'.format(int(bad.sum())))
    return np.maximum(var, 0.)


def mc_moments_gaussian(passes, return_components=False):
    """
    Predictive mean and variance of the Gaussian model: the variance is the mean of the per-pass variances
    (aleatoric) plus the variance of the per-pass means (epistemic).

    Parameters
    ----------
    passes: McPassSet
    return_components: bool
        Also return (aleatoric, epistemic).
    """
    _check_passes(passes, 'gaussian')
    loc = passes.location
    mean = loc.mean(axis=0)
    aleatoric = passes.variance.mean(axis=0)

    # deviations from the first pass keep identical passes at exactly zero spread
    epistemic = np.var(loc - loc[0], axis=0)
    var = aleatoric + epistemic
    if return_components:
        return mean, var, aleatoric, epistemic
    return mean, var


def _dc_gaussian_raw_moments(passes):
    p = passes.rain_prob
    loc = passes.location
    mean = (p * loc).mean(axis=0)
    second = (p * (loc ** 2 + passes.variance)).mean(axis=0)
    return mean, second, p.mean(axis=0)


def mc_moments_dc_gaussian(passes):
    """
    Predictive moments of the discrete-continuous Gaussian mixture over passes.

    Returns
    -------
    mean, variance, rain_prob: arrays
    """
    _check_passes(passes, 'dc_gaussian')
    mean, second, p_bar = _dc_gaussian_raw_moments(passes)
    return mean, _clamp_variance(second - mean ** 2, second), p_bar


def _dc_lognormal_raw_moments(passes):
    p = passes.rain_prob
    mu = passes.location
    var = passes.variance
    with np.errstate(over='ignore', invalid='ignore'):
        mean = (p * np.exp(mu + var / 2.)).mean(axis=0)
        second = (p * np.exp(2. * mu + 2. * var)).mean(axis=0)
    for name, arr in [('lognormal mean', mean), ('lognormal second moment', second)]:
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(arr)))[0]
            raise NonFiniteError(name, tuple(bad))
    return mean, second, p.mean(axis=0)


def mc_moments_dc_lognormal(passes):
    """
    Predictive moments of the discrete-continuous lognormal mixture over passes.

    Returns
    -------
    mean, variance, rain_prob: arrays
    """
    _check_passes(passes, 'dc_lognormal')
    mean, second, p_bar = _dc_lognormal_raw_moments(passes)
    return mean, _clamp_variance(second - mean ** 2, second), p_bar


def lognormal_moment_match(mean, variance):
    """
    Parameters (mu, sigma) of the lognormal with the given mean and variance.

        sigma^2 = log(1 + Var / E^2),   mu = log E - sigma^2 / 2
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(mean <= 0):
        raise DomainError('lognormal moment matching needs a positive mean')
    if np.any(variance < 0):
        raise DomainError('lognormal moment matching needs a non-negative variance')
    sigma2 = np.log1p(variance / mean ** 2)
    mu = np.log(mean) - sigma2 / 2.
    return mu, np.sqrt(sigma2)


def rainy_conditional_moments(mean, second_moment, rain_prob):
    """
    Mean and variance of the rainy part of a hurdle mixture from its overall moments. Pixels whose rain
    probability is below MIN_RAIN_PROB are reported as collapsed and get zeros.

    Returns
    -------
    cond_mean, cond_var, collapsed: arrays
    """
    collapsed = rain_prob < MIN_RAIN_PROB
    safe_p = np.where(collapsed, 1., rain_prob)
    cond_mean = np.where(collapsed, 0., mean / safe_p)
    cond_second = np.where(collapsed, 0., second_moment / safe_p)
    cond_var = np.maximum(cond_second - cond_mean ** 2, 0.)
    return cond_mean, cond_var, collapsed


def predictive_distribution(passes, cdf_mode='moment_matched'):
    """
    Dispatch to the moment estimator of the passes' model and recover the matched parameters.

    Parameters
    ----------
    passes: McPassSet
        In model units; converted to mm first.
    cdf_mode: str
        'moment_matched' or 'mc_mixture'. Only decides how predictive_cdf evaluates this distribution.

    Returns
    -------
    PredictiveDistribution
    """
    passes = passes.in_mm()
    aleatoric = epistemic = None
    if passes.model_tag == 'gaussian':
        mean, var, aleatoric, epistemic = mc_moments_gaussian(passes, return_components=True)
        p_bar = np.ones_like(mean)
        second = var + mean ** 2
        matched = (mean, var)
    else:
        if passes.model_tag == 'dc_gaussian':
            mean, second, p_bar = _dc_gaussian_raw_moments(passes)
        else:
            mean, second, p_bar = _dc_lognormal_raw_moments(passes)
        var = _clamp_variance(second - mean ** 2, second)
        cond_mean, cond_var, collapsed = rainy_conditional_moments(mean, second, p_bar)
        if passes.model_tag == 'dc_gaussian':
            matched = (cond_mean, cond_var)
        else:
            mu, sigma = lognormal_moment_match(np.where(collapsed, 1., cond_mean), np.where(collapsed, 0., cond_var))
            matched = (np.where(collapsed, 0., mu), np.where(collapsed, 0., sigma))
    return PredictiveDistribution(mean, var, p_bar, second, matched, passes.model_tag, cdf_mode,
                                  aleatoric=aleatoric, epistemic=epistemic)


########
# CDFS #
########
def _matched_cdf(dist, y, strict):
    first, second = (np.asarray(a, dtype=float) for a in dist.matched_params)
    if dist.model_tag == 'gaussian':
        sd = np.sqrt(second)
        zero = sd == 0
        cdf = norm.cdf((y - first) / np.where(zero, 1., sd))
        return _fill_degenerate(cdf, zero, y, first, strict)

    p_bar = np.asarray(dist.rain_prob, dtype=float)
    collapsed = p_bar < MIN_RAIN_PROB
    if dist.model_tag == 'dc_gaussian':
        sd = np.sqrt(second)
        zero = (sd == 0) & ~collapsed
        cont = norm.cdf((y - first) / np.where(sd == 0, 1., sd))
        cont = _fill_degenerate(cont, zero, y, first, strict)
    else:
        sigma = second
        zero = (sigma == 0) & ~collapsed
        with np.errstate(divide='ignore'):
            log_y = np.log(np.where(y > 0, y, 1.))
        cont = np.where(y > 0, norm.cdf((log_y - first) / np.where(sigma == 0, 1., sigma)), 0.)
        cont = _fill_degenerate(cont, zero & (y > 0), log_y, first, strict)
    cont = np.where(collapsed, 0., cont)
    return (1. - p_bar) + p_bar * cont


def _fill_degenerate(cdf, zero, y, centre, strict):
    """Replace the CDF at zero-spread pixels by a step at the centre."""
    if not np.any(zero):
        return cdf
    y_b, centre_b, zero_b = np.broadcast_arrays(y, centre, zero)
    if strict and np.any(y_b[zero_b] != centre_b[zero_b]):
        raise ContractError('moment matched CDF with zero variance is only defined at its mean')
    logger.debug('%d zero-spread pixels use a step CDF', int(np.count_nonzero(zero)))
    return np.where(zero_b, (y_b >= centre_b).astype(float), cdf)


def _mixture_cdf(passes, y):
    passes = passes.in_mm()
    sd = np.sqrt(passes.variance)
    if passes.model_tag == 'dc_lognormal':
        with np.errstate(divide='ignore'):
            log_y = np.log(np.where(y > 0, y, 1.))
        cont = np.where(y > 0, norm.cdf((log_y - passes.location) / sd), 0.)
    else:
        cont = norm.cdf((y - passes.location) / sd)
    p = passes.rain_prob
    return ((1. - p) + p * cont).mean(axis=0)


def _cdf(dist, y, passes=None, strict=True):
    y = np.asarray(y, dtype=float)
    if dist.model_tag in DC_MODELS and np.any(y < 0):
        raise DomainError('hurdle predictive CDFs are only defined for y >= 0')
    if dist.cdf_mode == 'mc_mixture':
        if passes is None:
            raise ContractError('mc_mixture CDFs need the Monte Carlo passes')
        if passes.model_tag != dist.model_tag:
            raise ContractError('passes ({}) do not match distribution ({})'.format(passes.model_tag,
                                                                                   dist.model_tag))
        return _mixture_cdf(passes, y)
    return _matched_cdf(dist, y, strict)


def predictive_cdf(dist, y, passes=None):
    """
    Predictive CDF P(Y <= y) per pixel.

    Parameters
    ----------
    dist: PredictiveDistribution
    y: array
        mm/day, broadcastable to the distribution's shape.
    passes: McPassSet, optional
        Required when dist.cdf_mode is 'mc_mixture'; the CDF is then the exact average of the per-pass CDFs.

    Returns
    -------
    array of probabilities
    """
    return _cdf(dist, y, passes, strict=True)


def predictive_quantile(dist, q, passes=None, n_iter=80):
    """
    Per-pixel q-quantile of the predictive distribution, found by bisection on its CDF. For the hurdle models
    any q at or below the dry mass maps to 0.
    """
    if not 0 < q < 1:
        raise DomainError('quantile level must be inside (0, 1), got {}'.format(q))
    mean = np.asarray(dist.mean, dtype=float)
    sd = np.sqrt(np.asarray(dist.variance, dtype=float))
    if dist.cdf_mode == 'mc_mixture' and passes is not None:
        mm = passes.in_mm()
        spread = np.sqrt(mm.variance).max(axis=0)
        if dist.model_tag == 'gaussian':
            lo = mm.location.min(axis=0) - 40 * spread - 1.
            hi = mm.location.max(axis=0) + 40 * spread + 1.
        else:
            lo = np.zeros_like(mean)
            hi = mean + 10 * sd + 1.
    elif dist.model_tag == 'gaussian':
        lo = mean - 40 * sd - 1.
        hi = mean + 40 * sd + 1.
    else:
        lo = np.zeros_like(mean)
        hi = mean + 10 * sd + 1.

    # heavy right tails may need a wider bracket
    for _ in range(200):
        short = _cdf(dist, hi, passes, strict=False) < q
        if not np.any(short):
            break
        hi = np.where(short, hi * 2., hi)

    for _ in range(n_iter):
        mid = (lo + hi) / 2.
        below = _cdf(dist, mid, passes, strict=False) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return hi


def predictive_interval(dist, level, passes=None):
    """Central predictive interval (lower, upper) holding probability `level`."""
    if not 0 < level < 1:
        raise DomainError('interval level must be inside (0, 1), got {}'.format(level))
    return (predictive_quantile(dist, (1. - level) / 2., passes),
            predictive_quantile(dist, (1. + level) / 2., passes))


############
# DENSITY #
############
def predictive_log_density(passes, y, rain_threshold=RAIN_THRESHOLD):
    """
    Log predictive density of observations in mm under the mixture over passes, with every constant kept: the 2 pi
    terms, the -log y of the lognormal and the Jacobian of any precipitation scaling. For the hurdle models an
    observation at or below the rain threshold is scored by the dry mass.
    """
    passes = passes.in_mm()
    y = np.asarray(y, dtype=float)
    if y.shape != passes.location.shape[1:]:
        raise ContractError('observation shape {} does not match passes {}'.format(y.shape,
                                                                                 passes.location.shape[1:]))
    s = passes.s
    if passes.model_tag == 'gaussian':
        log_dens = -0.5 * (LOG_2PI + s + (y - passes.location) ** 2 * np.exp(-s))
    else:
        wet = is_wet(y, rain_threshold)
        if passes.model_tag == 'dc_gaussian':
            cont = -0.5 * (LOG_2PI + s + (y - passes.location) ** 2 * np.exp(-s))
        else:
            log_y = np.log(np.where(wet, y, 1.))
            cont = -0.5 * (LOG_2PI + s + (log_y - passes.location) ** 2 * np.exp(-s)) - log_y
        log_dens = np.where(wet, log_expit(passes.phi) + cont, log_expit(-passes.phi))
    return logsumexp(log_dens, axis=0) - np.log(passes.T)


def full_nll(passes, y, rain_threshold=RAIN_THRESHOLD):
    """Mean negative log predictive density over all pixels."""
    return float(-np.mean(predictive_log_density(passes, y, rain_threshold)))
