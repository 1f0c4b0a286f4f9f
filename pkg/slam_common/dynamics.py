""" Transition model: Euler integration of controls into velocity and of
    velocity into pose, its first order linearization and the closed form
    propagation of the 12-dim state belief.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .beliefs import Gaussian, propagate_linear, split_joint
from .errors import InvalidConfig
from .geometry import Pose, Quat, Twist, ominus, oplus

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


@dataclass(frozen=True)
class TransitionParams:
    """ Step length (s), velocity and pose noise stddevs ordered as
        [translation x3, rotation x3], and the exponent of dt in the velocity
        update
    """
    dt: float = 0.1
    sigma_vel: tuple = (0.03, 0.03, 0.03, 0.03, 0.03, 0.03)
    sigma_pose: tuple = (0.05, 0.05, 0.05, 0.02, 0.02, 0.02)
    velocity_dt_power: float = 2.0

    def __post_init__(self):
        sigma_vel = tuple(float(s) for s in self.sigma_vel)
        sigma_pose = tuple(float(s) for s in self.sigma_pose)
        if self.dt <= 0:
            raise InvalidConfig('dt must be positive')
        if len(sigma_vel) != 6 or len(sigma_pose) != 6:
            raise InvalidConfig('Transition scales need six entries')
        if min(sigma_vel + sigma_pose) <= 0:
            raise InvalidConfig('Transition scales must be positive')
        object.__setattr__(self, 'sigma_vel', sigma_vel)
        object.__setattr__(self, 'sigma_pose', sigma_pose)

    @classmethod
    def isotropic(cls, dt, vel_translation=0.03, vel_rotation=0.03,
                  pose_translation=0.05, pose_rotation=0.02, **kwargs):
        return cls(dt, (vel_translation,) * 3 + (vel_rotation,) * 3,
                   (pose_translation,) * 3 + (pose_rotation,) * 3, **kwargs)

    def with_dt(self, dt):
        return TransitionParams(dt, self.sigma_vel, self.sigma_pose,
                                self.velocity_dt_power)

    @property
    def process_noise(self):
        """ Covariance of the joint (pose, velocity) process noise """
        return np.diag(np.square(np.concatenate((self.sigma_pose,
                                                 self.sigma_vel))))


@dataclass(frozen=True)
class TransitionLinearization:
    """ p_next ~= chart (+) (A d + B v + c), d the tangent of the previous
        pose at its own linearization point
    """
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    chart: Pose


class PropagatedBelief(NamedTuple):
    state_prior: Gaussian
    pose_prior: Gaussian
    vel_given_pose: object
    chart: Pose


def integrate_velocity(v, u, params):
    scale = params.dt ** params.velocity_dt_power
    return Twist(v.linear + u.linear_accel * scale,
                 v.angular + u.angular_accel * scale)


def integrate_pose(p, v_next, params):
    rotation = Quat.multiply(Quat.exp(v_next.angular * params.dt), p.rotation)
    return Pose(p.translation + v_next.linear * params.dt, rotation)


def linearize_pose_integration(p0, v0, params):
    """ Central finite differences of the pose integration in the tangent
        charts at p0 (input) and at integrate_pose(p0, v0) (output)
    """
    chart = integrate_pose(p0, v0, params)
    base = v0.as_vector()

    def step(delta, vel):
        return ominus(integrate_pose(oplus(p0, delta), Twist.from_vector(vel),
                                     params), chart)

    A = np.zeros((6, 6))
    B = np.zeros((6, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = FD_STEP
        A[:, i] = (step(e, base) - step(-e, base)) / (2 * FD_STEP)
        B[:, i] = (step(np.zeros(6), base + e)
                   - step(np.zeros(6), base - e)) / (2 * FD_STEP)
    return TransitionLinearization(A, B, -B @ base, chart)


def propagate_belief(prev, u, params):
    """ Push the previous state belief through the linearized transition and
        split the result into the pose prior and the velocity conditional.

        The previous belief's pose block lives in the tangent at its mean
        pose; every output lives in the tangent at the propagated mean pose
        (`chart`).
    """
    u_vec = u.as_vector()
    v_next_mean = integrate_velocity(prev.mean_velocity, u, params)
    lin = linearize_pose_integration(prev.mean_pose, v_next_mean, params)
    scale = params.dt ** params.velocity_dt_power
    eye = np.eye(6)
    mat = np.block([[lin.A, lin.B], [np.zeros((6, 6)), eye]])
    mean_in = np.concatenate((np.zeros(6), prev.mean_velocity.as_vector()))
    offset = np.concatenate((lin.B @ u_vec * scale + lin.c, u_vec * scale))
    state_prior = propagate_linear(Gaussian(mean_in, prev.covariance), mat,
                                   offset, params.process_noise)
    pose_prior, vel_given_pose = split_joint(state_prior, 6)
    logger.debug('Propagated pose stddev %s',
                 np.sqrt(np.diag(pose_prior.covariance)))
    return PropagatedBelief(state_prior, pose_prior, vel_given_pose,
                            lin.chart)
