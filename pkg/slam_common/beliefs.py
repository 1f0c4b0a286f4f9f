""" Gaussian algebra used by both marginal filters: diagonal products for the
    map, linear-Gaussian propagation, conditioning and whitening for the
    state.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NotPositiveDefinite, SingularHeadBlock

logger = logging.getLogger(__name__)

JITTERS = (0.0, 1e-12, 1e-10, 1e-8)


def symmetrize(mat):
    mat = np.asarray(mat, dtype=np.float64)
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True)
class Gaussian:
    """ Multivariate normal with dense covariance """
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch('Covariance {} does not match mean {}'
                                    .format(cov.shape, mean.shape))
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', cov)

    @property
    def dim(self):
        return self.mean.size

    def logpdf(self, x):
        """ Log-density at x, also defined for rank deficient covariances
            through the pseudo-determinant on the covariance range
        """
        diff = np.asarray(x, dtype=np.float64) - self.mean
        vals, vecs = np.linalg.eigh(self.covariance)
        keep = vals > 1e-12 * max(vals.max(), 1e-300)
        proj = vecs[:, keep].T @ diff
        maha = np.sum(proj ** 2 / vals[keep])
        return -0.5 * (maha + np.sum(np.log(vals[keep]))
                       + keep.sum() * np.log(2 * np.pi))


@dataclass(frozen=True)
class LinearGaussianConditional:
    """ p(y | x) = N(y | gain x + offset, noise_covariance) """
    gain: np.ndarray
    offset: np.ndarray
    noise_covariance: np.ndarray

    def __post_init__(self):
        gain = np.atleast_2d(np.asarray(self.gain, dtype=np.float64))
        offset = np.atleast_1d(np.asarray(self.offset, dtype=np.float64))
        noise = np.atleast_2d(np.asarray(self.noise_covariance,
                                         dtype=np.float64))
        if gain.shape[0] != offset.size or noise.shape != (offset.size,) * 2:
            raise DimensionMismatch('Conditional blocks are not conformable')
        object.__setattr__(self, 'gain', gain)
        object.__setattr__(self, 'offset', offset)
        object.__setattr__(self, 'noise_covariance', symmetrize(noise))


@dataclass(frozen=True)
class DiagonalGaussian:
    """ Independent normals. A stddev of inf stands for an uninformed factor
        (precision 0)
    """
    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.broadcast_to(np.asarray(self.stddev, dtype=np.float64),
                              mean.shape).copy()
        if np.any(~(std > 0)):
            raise ValueError('stddev must be strictly positive')
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'stddev', std)

    @classmethod
    def from_precision(cls, mean, precision):
        precision = np.asarray(precision, dtype=np.float64)
        with np.errstate(divide='ignore'):
            std = np.where(precision > 0, 1.0 / np.sqrt(precision), np.inf)
        return cls(mean, std)

    @property
    def precision(self):
        return 1.0 / self.stddev ** 2


def product_diagonal(a, b):
    """ Normalised product of two diagonal Gaussians: precisions add and the
        mean is the precision weighted average
    """
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatch('Shapes {} and {} differ'
                                .format(a.mean.shape, b.mean.shape))
    prec_a, prec_b = a.precision, b.precision
    prec = prec_a + prec_b
    weighted = prec_a * a.mean + prec_b * b.mean
    mean = np.divide(weighted, prec, out=a.mean.copy(), where=prec > 0)
    return DiagonalGaussian.from_precision(mean, prec)


def propagate_linear(prior, mat, offset, noise):
    """ Push N(mu, S) through x -> A x + b + w, w ~ N(0, Q) """
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    offset = np.atleast_1d(np.asarray(offset, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    rows = mat.shape[0]
    if mat.shape[1] != prior.dim or offset.size != rows \
            or noise.shape != (rows, rows):
        raise DimensionMismatch('Linear map is not conformable with prior')
    mean = mat @ prior.mean + offset
    cov = mat @ prior.covariance @ mat.T + noise
    return Gaussian(mean, symmetrize(cov))


def split_joint(joint, split_index):
    """ Factor a joint into the marginal of its first `split_index` entries
        and the linear-Gaussian conditional of the remaining ones
    """
    if not 0 < split_index < joint.dim:
        raise DimensionMismatch('split_index must be inside (0, n)')
    k = split_index
    mu1, mu2 = joint.mean[:k], joint.mean[k:]
    cov = joint.covariance
    s11, s12, s21, s22 = cov[:k, :k], cov[:k, k:], cov[k:, :k], cov[k:, k:]
    if np.linalg.eigvalsh(symmetrize(s11)).min() <= 1e-12:
        raise SingularHeadBlock('Head block of the joint is singular')
    factor = linalg.cho_factor(symmetrize(s11), lower=True)
    gain = linalg.cho_solve(factor, s12).T
    noise = symmetrize(s22 - gain @ s12)
    marginal = Gaussian(mu1, symmetrize(s11))
    return marginal, LinearGaussianConditional(gain, mu2 - gain @ mu1, noise)


def recombine(marginal, cond):
    """ Joint of x ~ marginal and y | x ~ cond, ordered (x, y) """
    if cond.gain.shape[1] != marginal.dim:
        raise DimensionMismatch('Conditional gain does not match marginal')
    s1 = marginal.covariance
    gain = cond.gain
    cross = gain @ s1
    cov = np.block([[s1, cross.T],
                    [cross, gain @ s1 @ gain.T + cond.noise_covariance]])
    mean = np.concatenate((marginal.mean, gain @ marginal.mean + cond.offset))
    return Gaussian(mean, symmetrize(cov))


def robust_cholesky(cov):
    """ Lower Cholesky factor; on failure jitter of 1e-12, 1e-10 and 1e-8
        times the mean diagonal is tried before giving up
    """
    cov = symmetrize(cov)
    n = cov.shape[0]
    scale = max(np.trace(cov) / n, 1e-300)
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(cov + jitter * scale * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if jitter:
            logger.debug('Cholesky needed jitter %g', jitter * scale)
        return chol
    raise NotPositiveDefinite('Matrix is not positive definite')


def whiten(residual, cov):
    """ L^-1 r for the lower Cholesky factor L of cov. Works on a single
        residual (n,) or a batch (N, n)
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if np.linalg.eigvalsh(symmetrize(cov)).min() <= 1e-12:
        raise NotPositiveDefinite('Covariance is not positive definite')
    chol = robust_cholesky(cov)
    residual = np.asarray(residual, dtype=np.float64)
    if residual.ndim <= 1:
        flat = np.atleast_1d(residual)
        return linalg.solve_triangular(chol, flat, lower=True) \
            .reshape(residual.shape)
    return linalg.solve_triangular(chol, residual.T, lower=True).T


def inverse_spd(mat):
    """ Inverse of a symmetric positive definite matrix """
    chol = robust_cholesky(mat)
    n = chol.shape[0]
    inv_chol = linalg.solve_triangular(chol, np.eye(n), lower=True)
    return symmetrize(inv_chol.T @ inv_chol)
