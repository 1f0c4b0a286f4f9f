""" Marginal state filter: MAP estimate of the current pose against a
    rendered anchor frame, its Laplace covariance and the fusion with the
    velocity conditional of the transition.

    All pose perturbations live in the tangent chart of geometry.oplus. The
    per-pixel objective is evaluated in torch (float64) so the descent can
    use autograd and a torch optimizer.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .beliefs import (Gaussian, inverse_spd, recombine, robust_cholesky,
                      symmetrize)
from .enums import Optimizers
from .errors import (DimensionMismatch, InvalidConfig, NoValidPixels,
                     NotPositiveDefinite, TrackingLost)
from .geometry import Pose, Quat, Twist, chart_jacobian, ominus, oplus
from .renderer import compute_normals, unproject_frame
from .torch_custom import bilinear_sample, first_order_rotation, to_tensor

logger = logging.getLogger(__name__)

# Anchor image channels: points (3), normals (3), color (3), normal support
ANCHOR_CHANNELS = 10
SUPPORT_MIN = 0.999


@dataclass(frozen=True)
class StateBelief:
    """ Gaussian over [pose tangent at mean_pose (6), velocity (6)] """
    mean_pose: Pose
    mean_velocity: Twist
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (12, 12):
            raise DimensionMismatch('State covariance must be 12x12')
        object.__setattr__(self, 'covariance', symmetrize(cov))

    @classmethod
    def at_rest(cls, pose, velocity=None, pose_stddev=1e-3,
                velocity_stddev=1e-3):
        velocity = Twist.zero() if velocity is None else velocity
        std = np.concatenate((np.full(6, pose_stddev),
                              np.full(6, velocity_stddev)))
        return cls(pose, velocity, np.diag(std ** 2))

    @property
    def pose_covariance(self):
        return self.covariance[:6, :6]

    def mean_vector(self):
        """ [translation, rotation vector, linear vel, angular vel] """
        rotvec = Quat.to_scipy(self.mean_pose.rotation).as_rotvec()
        return np.concatenate((self.mean_pose.translation, rotvec,
                               self.mean_velocity.as_vector()))


@dataclass(frozen=True)
class TrackerParams:
    """ Descent, sampling, outlier and Laplace settings of the pose filter """
    steps: int = 1000
    lr_translation: float = 0.001
    lr_rotation: float = 0.00036
    pixel_samples: int = 200
    geo_outlier: float = 0.45
    photo_outlier: float = 0.15
    laplace_ema: float = 0.8
    damping: float = 1e-8
    optimizer: str = 'adam'
    normal_max_jump: float = 0.1
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.steps < 1 or self.pixel_samples < 1:
            raise InvalidConfig('steps and pixel_samples must be >= 1')
        if self.lr_translation <= 0 or self.lr_rotation <= 0:
            raise InvalidConfig('Learning rates must be positive')
        if self.geo_outlier <= 0 or self.photo_outlier <= 0:
            raise InvalidConfig('Outlier thresholds must be positive')
        if not 0 <= self.laplace_ema < 1:
            raise InvalidConfig('laplace_ema must lie in [0, 1)')
        try:
            Optimizers(self.optimizer)
        except (KeyError, ValueError):
            raise InvalidConfig('Unknown optimizer ' + str(self.optimizer))


@dataclass(frozen=True)
class Anchor:
    """ Rendered prediction the observation is aligned against """
    frame: object
    pose: Pose
    image: torch.Tensor

    @classmethod
    def from_frame(cls, frame, pose, max_jump=0.1):
        points, normals, ok = compute_normals(frame, max_jump)
        stack = np.concatenate((points, normals, frame.color,
                                ok[..., None].astype(np.float64)), axis=-1)
        return cls(frame, pose, to_tensor(stack.transpose(2, 0, 1)))

    @property
    def support(self):
        return float(self.image[-1].mean())


class Residuals(NamedTuple):
    geo: np.ndarray
    photo: np.ndarray
    valid: np.ndarray


class TrackingResult(NamedTuple):
    pose: Pose
    objective: float
    valid_fraction: float


class _Observation:
    """ Flattened camera-frame points and colors of one RGB-D frame """

    def __init__(self, frame):
        self.points = to_tensor(unproject_frame(frame).reshape(-1, 3))
        self.colors = to_tensor(frame.color.reshape(-1, 3))
        self.valid = frame.valid.reshape(-1)
        self.valid_index = np.flatnonzero(self.valid)


def _relative(candidate, anchor_pose):
    """ Rotation and translation mapping candidate camera to anchor camera """
    rot_a = anchor_pose.rotation_matrix
    rot = rot_a.T @ candidate.rotation_matrix
    trans = rot_a.T @ (candidate.translation - anchor_pose.translation)
    return to_tensor(rot), to_tensor(trans)


def _warp(rot, trans, points, colors, anchor):
    """ Raw point-to-plane and color residuals of camera points moved into
        the anchor frame, and the mask of points landing on supported pixels
    """
    k = anchor.frame.intrinsics
    warped = points @ rot.T + trans
    z = warped[:, 2]
    front = z > 1e-6
    z_safe = torch.where(front, z, torch.ones_like(z))
    u = k.fx * warped[:, 0] / z_safe + k.cx
    v = k.fy * warped[:, 1] / z_safe + k.cy
    inside = front & (u >= 0) & (u <= k.width - 1) & (v >= 0) \
        & (v <= k.height - 1)
    ref = bilinear_sample(anchor.image, u, v)
    geo = torch.sum((ref[:, 0:3] - warped) * ref[:, 3:6], dim=-1)
    photo = ref[:, 6:9] - colors
    supported = inside & (ref[:, 9] > SUPPORT_MIN)
    return geo, photo, supported


def _inliers(geo, photo, supported, params):
    return supported & (geo.abs() <= params.geo_outlier) \
        & (photo.abs().amax(dim=-1) <= params.photo_outlier)


def tracking_residuals(pose_candidate, obs, anchor, pixels, params, emission):
    """ Point-to-plane and photometric residuals of the sampled observation
        pixels (flat indices) warped into the anchor, scaled by the emission
        scales. Rows outside `valid` must be ignored.
    """
    data = obs if isinstance(obs, _Observation) else _Observation(obs)
    pixels = np.asarray(pixels, dtype=np.int64)
    rot, trans = _relative(pose_candidate, anchor.pose)
    with torch.no_grad():
        geo, photo, supported = _warp(rot, trans, data.points[pixels],
                                      data.colors[pixels], anchor)
        valid = _inliers(geo, photo, supported, params).numpy() \
            & data.valid[pixels]
    if not valid.any():
        raise NoValidPixels('No sampled pixel is usable')
    return Residuals(geo.numpy() / emission.sigma_geo,
                     photo.numpy() / emission.sigma_color, valid)


def _prior_terms(pose_prior):
    cov = pose_prior.covariance
    if np.linalg.eigvalsh(cov).min() <= 1e-12:
        raise NotPositiveDefinite('Pose prior covariance is not PD')
    chol = robust_cholesky(cov)
    log_norm = -np.sum(np.log(np.diag(chol))) - 3.0 * np.log(2 * np.pi)
    return inverse_spd(cov), chol, log_norm


def prior_logpdf(pose_candidate, pose_prior, chart):
    """ Log-density of the candidate under the pose prior expressed in the
        tangent chart at `chart`, and its gradient w.r.t. a tangent
        perturbation of the candidate
    """
    precision, _, log_norm = _prior_terms(pose_prior)
    resid = ominus(pose_candidate, chart) - pose_prior.mean
    value = -0.5 * resid @ precision @ resid + log_norm
    grad = -chart_jacobian(pose_candidate, chart).T @ precision @ resid
    return float(value), grad


def _objective(pose, xi_t, xi_r, data, pixels, anchor, prior, params,
               emission):
    """ L1 data terms on the sampled pixels plus the negative log prior, as
        a differentiable function of the increment (xi_t, xi_r) at `pose`
    """
    precision, r0, jac = prior
    rot_a = to_tensor(anchor.pose.rotation_matrix)
    rot_c = first_order_rotation(xi_r) @ to_tensor(pose.rotation_matrix)
    rot = rot_a.T @ rot_c
    trans = rot_a.T @ (to_tensor(pose.translation) + xi_t
                       - to_tensor(anchor.pose.translation))
    geo, photo, supported = _warp(rot, trans, data.points[pixels],
                                  data.colors[pixels], anchor)
    keep = _inliers(geo.detach(), photo.detach(), supported, params)
    keep &= torch.as_tensor(data.valid[pixels])
    loss = geo[keep].abs().sum() / emission.sigma_geo \
        + photo[keep].abs().sum() / emission.sigma_color
    resid = r0 + jac @ torch.cat((xi_t, xi_r))
    loss = loss + 0.5 * resid @ precision @ resid
    return loss, int(keep.sum())


def _prior_linearization(pose, pose_prior, chart, precision):
    r0 = ominus(pose, chart) - pose_prior.mean
    return (to_tensor(precision), to_tensor(r0),
            to_tensor(chart_jacobian(pose, chart)))


def full_objective(pose, obs, anchor, pose_prior, chart, params, emission):
    """ Objective over every valid observation pixel; returns the value and
        the fraction of valid pixels that survive warping and outliers
    """
    data = obs if isinstance(obs, _Observation) else _Observation(obs)
    precision, _, _ = _prior_terms(pose_prior)
    prior = _prior_linearization(pose, pose_prior, chart, precision)
    zero = torch.zeros(3, dtype=torch.float64)
    with torch.no_grad():
        loss, kept = _objective(pose, zero, zero, data, data.valid_index,
                                anchor, prior, params, emission)
    fraction = kept / max(len(data.valid_index), 1)
    return float(loss), fraction


def _mean_abs_geo(pose, data, anchor):
    rot, trans = _relative(pose, anchor.pose)
    idx = data.valid_index
    with torch.no_grad():
        geo, _, supported = _warp(rot, trans, data.points[idx],
                                  data.colors[idx], anchor)
    if not bool(supported.any()):
        return np.inf
    return float(geo[supported].abs().mean())


def optimize_pose(obs, anchor, pose_prior, chart, params, emission, rng,
                  init=None):
    """ Gradient descent on the tangent increment of the pose. Every step
        draws a fresh uniform sample of valid observation pixels, takes one
        optimizer step and folds the increment back into the pose.
    """
    data = _Observation(obs)
    if not len(data.valid_index):
        raise TrackingLost('Observation has no valid depth')
    pose = oplus(chart, pose_prior.mean) if init is None else init
    precision, _, _ = _prior_terms(pose_prior)

    xi_t = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    xi_r = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    optimizer = Optimizers(params.optimizer).value(
        [{'params': [xi_t], 'lr': params.lr_translation},
         {'params': [xi_r], 'lr': params.lr_rotation}])
    skipped = 0
    for _ in range(params.steps):
        pixels = rng.choice(data.valid_index, size=params.pixel_samples)
        prior = _prior_linearization(pose, pose_prior, chart, precision)
        optimizer.zero_grad()
        loss, kept = _objective(pose, xi_t, xi_r, data, pixels, anchor,
                                prior, params, emission)
        if not kept:
            skipped += 1
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            delta = torch.cat((xi_t, xi_r)).numpy().copy()
            xi_t.zero_()
            xi_r.zero_()
        pose = oplus(pose, delta)
    if skipped:
        logger.debug('%d of %d descent steps had no valid pixel', skipped,
                     params.steps)

    mean_geo = _mean_abs_geo(pose, data, anchor)
    if not mean_geo <= params.geo_outlier:
        raise TrackingLost('Mean geometric residual {:.3f} m exceeds {}'
                           .format(mean_geo, params.geo_outlier))
    value, fraction = full_objective(pose, data, anchor, pose_prior, chart,
                                     params, emission)
    logger.debug('Tracking objective %.4f, valid fraction %.3f', value,
                 fraction)
    return TrackingResult(pose, value, fraction)


def laplace_from_jacobian(jac, damping=1e-8):
    """ (2 J^T J + damping * trace / 6 * I)^-1 """
    info = 2.0 * jac.T @ jac
    dim = info.shape[0]
    info = info + damping * np.trace(info) / dim * np.eye(dim)
    return inverse_spd(info)


def laplace_covariance(pose_map, obs, anchor, pose_prior, chart, params,
                       emission):
    """ Laplace covariance at the MAP pose. Rows: every full-image inlier
        residual (mask fixed at pose_map), differentiated by central finite
        differences, and the whitened prior residual.
    """
    data = obs if isinstance(obs, _Observation) else _Observation(obs)
    idx = data.valid_index
    points, colors = data.points[idx], data.colors[idx]

    def scaled(pose):
        rot, trans = _relative(pose, anchor.pose)
        with torch.no_grad():
            geo, photo, supported = _warp(rot, trans, points, colors, anchor)
        return geo.numpy(), photo.numpy(), supported

    geo, photo, supported = scaled(pose_map)
    mask = _inliers(torch.as_tensor(geo), torch.as_tensor(photo), supported,
                    params).numpy()
    rows = []
    if mask.any():
        jac = np.zeros((4 * int(mask.sum()), 6))
        for i in range(6):
            step = np.zeros(6)
            step[i] = params.fd_step
            g_p, c_p, _ = scaled(oplus(pose_map, step))
            g_m, c_m, _ = scaled(oplus(pose_map, -step))
            d_geo = (g_p - g_m)[mask] / emission.sigma_geo
            d_col = (c_p - c_m)[mask].ravel() / emission.sigma_color
            jac[:, i] = np.concatenate((d_geo, d_col)) / (2 * params.fd_step)
        rows.append(jac)
    _, chol, _ = _prior_terms(pose_prior)
    rows.append(np.linalg.solve(chol, chart_jacobian(pose_map, chart)))
    return laplace_from_jacobian(np.vstack(rows), params.damping)


def smooth_covariance(current, previous, ema):
    """ Exponential moving average of pose covariances """
    if previous is None:
        return symmetrize(current)
    return symmetrize(ema * np.asarray(previous)
                      + (1.0 - ema) * np.asarray(current))


def _rechart_jacobian(chart, delta, target, step=1e-6):
    jac = np.zeros((6, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = step
        jac[:, i] = (ominus(oplus(chart, delta + e), target)
                     - ominus(oplus(chart, delta - e), target)) / (2 * step)
    return jac


def fuse_velocity(pose_belief, vel_given_pose, chart=None):
    """ Joint state belief of the pose posterior and the velocity
        conditional. Both are given in the tangent chart at `chart`; the
        result is re-expressed at its own mean pose.
    """
    if pose_belief.dim != 6 or vel_given_pose.gain.shape != (6, 6):
        raise DimensionMismatch('fuse_velocity needs 6-dim blocks')
    chart = Pose.identity() if chart is None else chart
    joint = recombine(pose_belief, vel_given_pose)
    mean_pose = oplus(chart, joint.mean[:6])
    transform = np.eye(12)
    transform[:6, :6] = _rechart_jacobian(chart, joint.mean[:6], mean_pose)
    covariance = transform @ joint.covariance @ transform.T
    return StateBelief(mean_pose, Twist.from_vector(joint.mean[6:]),
                       covariance)

