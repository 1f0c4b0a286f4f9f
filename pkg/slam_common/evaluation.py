""" Trajectory accuracy and uncertainty calibration metrics """

import logging
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import gammainc

from .beliefs import robust_cholesky, symmetrize
from .errors import NoAssociations, NotPositiveDefinite, TooFewSamples
from .generator import MAX_DIFFERENCE, associate
from .geometry import ominus

logger = logging.getLogger(__name__)

MIN_CURVE_SAMPLES = 10


class Trajectory(NamedTuple):
    timestamps: np.ndarray
    poses: list


class CalibrationCurve(NamedTuple):
    predicted: np.ndarray
    observed: np.ndarray
    kolmogorov: float


class WhitenedResiduals(NamedTuple):
    samples: np.ndarray
    stddev: np.ndarray
    nssr: np.ndarray


def _pairs(estimated, ground_truth, max_difference):
    pairs = associate(estimated.timestamps, ground_truth.timestamps,
                      max_difference)
    if len(pairs) < 2:
        raise NoAssociations('Only {} associated poses'.format(len(pairs)))
    return pairs


def rigid_alignment(source, target):
    """ Rotation R and translation t minimising sum |R s + t - g|^2 """
    mu_s, mu_t = source.mean(0), target.mean(0)
    cross = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(cross)
    fix = np.diag([1.0, 1.0, np.sign(np.linalg.det(vt.T @ u.T))])
    rot = vt.T @ fix @ u.T
    return rot, mu_t - rot @ mu_s


def ate_rmse(estimated, ground_truth, align=False,
             max_difference=MAX_DIFFERENCE):
    """ RMSE of the translation residuals of associated poses, optionally
        after a rigid (no scale) alignment of the estimate
    """
    pairs = _pairs(estimated, ground_truth, max_difference)
    est = np.array([estimated.poses[i].translation for i, _ in pairs])
    ref = np.array([ground_truth.poses[j].translation for _, j in pairs])
    if align:
        rot, trans = rigid_alignment(est, ref)
        est = est @ rot.T + trans
    return float(np.sqrt(np.mean(np.sum((est - ref) ** 2, axis=1))))


def trajectory_residuals(estimated, covariances, ground_truth,
                         max_difference=MAX_DIFFERENCE):
    """ Ground truth expressed in the tangent chart at each associated
        estimate, with the matching covariances
    """
    pairs = _pairs(estimated, ground_truth, max_difference)
    residuals = np.array([ominus(ground_truth.poses[j], estimated.poses[i])
                          for i, j in pairs])
    covs = np.asarray(covariances)[[i for i, _ in pairs]]
    return residuals, covs


def _whiten_each(residuals, covariances):
    out = np.empty_like(residuals)
    for k, (res, cov) in enumerate(zip(residuals, covariances)):
        cov = symmetrize(cov)
        if np.linalg.eigvalsh(cov).min() <= 1e-12:
            raise NotPositiveDefinite('Covariance {} is not PD'.format(k))
        out[k] = linalg.solve_triangular(robust_cholesky(cov), res,
                                         lower=True)
    return out


def global_scale_correction(residuals, covariances):
    """ s with s^2 = mean(r^T S^-1 r) / dim, so that the corrected NSSR has
        mean one per dimension
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    white = _whiten_each(residuals, covariances)
    scale = float(np.sqrt(np.mean(np.sum(white ** 2, axis=1))
                          / residuals.shape[1]))
    if scale == 0:
        logger.warning('Global scale correction is zero; residuals vanish')
    return scale


def whitened_residuals(residuals, covariances, scale=1.0):
    """ Residuals whitened by (scale^2 S)^(1/2), their per-dimension sample
        stddev and the NSSR of every sample
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    covs = np.asarray(covariances, dtype=np.float64) * scale ** 2
    white = _whiten_each(residuals, covs)
    return WhitenedResiduals(white, white.std(axis=0),
                             np.sum(white ** 2, axis=1))


def chi_squared_curve(nssr, dim):
    """ Predicted chi-squared(dim) CDF against the empirical CDF at every
        sorted NSSR sample. Points above the diagonal mean the reported
        covariances are pessimistic.
    """
    nssr = np.sort(np.asarray(nssr, dtype=np.float64).ravel())
    n = len(nssr)
    if n < MIN_CURVE_SAMPLES:
        raise TooFewSamples('Need at least {} samples, got {}'
                            .format(MIN_CURVE_SAMPLES, n))
    predicted = gammainc(dim / 2.0, nssr / 2.0)
    observed = np.arange(1, n + 1) / n
    distance = max(np.max(np.abs(observed - predicted)),
                   np.max(np.abs(observed - 1.0 / n - predicted)))
    return CalibrationCurve(predicted, observed, float(distance))


def summary_lines(ate, ate_aligned, scale, whitened, curve):
    lines = ['ate_rmse {:.6f}'.format(ate)]
    if ate_aligned is not None:
        lines.append('ate_rmse_aligned {:.6f}'.format(ate_aligned))
    if scale is not None:
        lines.append('scale_correction {:.6f}'.format(scale))
    if whitened is not None:
        lines.append('whitened_stddev ' + ' '.join(
            '{:.4f}'.format(s) for s in whitened.stddev))
    if curve is not None:
        lines.append('kolmogorov {:.6f}'.format(curve.kolmogorov))
    return lines
