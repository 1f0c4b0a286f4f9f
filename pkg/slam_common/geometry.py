""" Rigid-body geometry shared by every module: poses, quaternions, the
    pinhole camera and the 6-dim tangent parameterisation of poses.

    Conventions:
        - Quaternions are stored as [w, x, y, z] (Hamilton product) and
          rotate body vectors into the world (world <- body). The sign is
          made canonical (w >= 0) so that q and -q give identical results.
        - Camera frame: x right, y down, z forward.
        - Pose tangent: [translation (3), axis-angle (3)]. Around a chart
          pose P the rotation perturbation is applied on the world side:
          oplus(P, d) = (t_P + d_t, Exp(d_r) * q_P).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NearPiRotation, NonPositiveDepth, InvalidConfig

PI_MARGIN = 1e-6


class Quat:
    """ Static class with the quaternion operations, [w, x, y, z] layout """

    @staticmethod
    def canonical(q):
        """ Normalize the quaternion and pick the representative with a
            non negative scalar part (first non zero entry positive if w = 0)
        """
        q = np.asarray(q, dtype=np.float64)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-300:
            raise ValueError('Quaternion must have a finite non zero norm')
        q = q / norm
        nonzero = np.flatnonzero(np.abs(q) > 0.0)
        if q[nonzero[0]] < 0.0:
            q = -q
        return q

    @staticmethod
    def multiply(a, b):
        """ Hamilton product a * b """
        aw, ax, ay, az = a
        bw, bx, by, bz = b
        return np.array([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw])

    @staticmethod
    def conjugate(q):
        return np.array([q[0], -q[1], -q[2], -q[3]])

    @staticmethod
    def to_scipy(q):
        return Rotation.from_quat([q[1], q[2], q[3], q[0]])

    @staticmethod
    def from_scipy(rot):
        x, y, z, w = rot.as_quat()
        return np.array([w, x, y, z])

    @staticmethod
    def to_matrix(q):
        return Quat.to_scipy(q).as_matrix()

    @staticmethod
    def from_matrix(mat):
        return Quat.canonical(Quat.from_scipy(Rotation.from_matrix(mat)))

    @staticmethod
    def exp(rotvec):
        """ Quaternion of an axis-angle vector """
        return Quat.canonical(Quat.from_scipy(
            Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64))))

    @staticmethod
    def angle(q):
        """ Rotation angle in [0, pi] of a unit quaternion """
        return 2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0]))

    @staticmethod
    def log(q):
        """ Axis-angle vector of a quaternion. It raises near the cut locus,
            where the axis flips discontinuously.
        """
        q = Quat.canonical(q)
        if Quat.angle(q) >= np.pi - PI_MARGIN:
            raise NearPiRotation('Rotation angle too close to pi for a log')
        return Quat.to_scipy(q).as_rotvec()


@dataclass(frozen=True)
class Pose:
    """ Rigid transform world <- body, translation in meters """
    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError('Pose translation must be finite')
        object.__setattr__(self, 'translation', t)
        object.__setattr__(self, 'rotation', Quat.canonical(
            np.asarray(self.rotation, dtype=np.float64).reshape(4)))

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=np.float64)
        return cls(mat[:3, 3], Quat.from_matrix(mat[:3, :3]))

    @property
    def rotation_matrix(self):
        return Quat.to_matrix(self.rotation)

    def as_matrix(self):
        mat = np.eye(4)
        mat[:3, :3] = self.rotation_matrix
        mat[:3, 3] = self.translation
        return mat

    def inverse(self):
        q_inv = Quat.conjugate(self.rotation)
        return Pose(-Quat.to_matrix(q_inv) @ self.translation, q_inv)

    def __matmul__(self, other):
        return compose(self, other)


@dataclass(frozen=True)
class Twist:
    """ Linear (m/s) and angular (rad/s) velocity in the world frame """
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        _store_finite(self, 'linear')
        _store_finite(self, 'angular')

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:3], vec[3:6])

    def as_vector(self):
        return np.concatenate((self.linear, self.angular))


@dataclass(frozen=True)
class Control:
    """ Linear (m/s^2) and angular (rad/s^2) acceleration, world frame """
    linear_accel: np.ndarray
    angular_accel: np.ndarray

    def __post_init__(self):
        _store_finite(self, 'linear_accel')
        _store_finite(self, 'angular_accel')

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:3], vec[3:6])

    def as_vector(self):
        return np.concatenate((self.linear_accel, self.angular_accel))


def _store_finite(obj, name):
    value = np.asarray(getattr(obj, name), dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(value)):
        raise ValueError('{} must be finite'.format(name))
    object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class CameraIntrinsics:
    """ Pinhole intrinsics in pixels, image size in pixels and the maximum
        usable depth in meters
    """
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    max_depth: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidConfig('Focal lengths must be positive')
        if self.max_depth <= 0:
            raise InvalidConfig('max_depth must be positive')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidConfig('Principal point must lie inside the image')

    @property
    def shape(self):
        return self.height, self.width

    def scaled(self, factor):
        """ Intrinsics of the image box-downsampled by an integer factor """
        return CameraIntrinsics(
            fx=self.fx / factor, fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
            width=self.width // factor, height=self.height // factor,
            max_depth=self.max_depth)

    def pixel_grid(self):
        """ (u, v) pixel coordinates of every pixel, each of shape (H, W) """
        return np.meshgrid(np.arange(self.width, dtype=np.float64),
                           np.arange(self.height, dtype=np.float64))


def compose(a, b):
    """ a o b: maps b's body frame into a's reference frame """
    translation = a.rotation_matrix @ b.translation + a.translation
    return Pose(translation, Quat.multiply(a.rotation, b.rotation))


def transform_point(pose, points):
    """ R p + t for one (3,) point or an (N, 3) array of points """
    points = np.asarray(points, dtype=np.float64)
    return points @ pose.rotation_matrix.T + pose.translation


def project(intrinsics, p_cam):
    """ Pinhole projection of camera-frame points to pixel coordinates """
    p_cam = np.asarray(p_cam, dtype=np.float64)
    z = p_cam[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth('Cannot project points with z <= 0')
    u = intrinsics.fx * p_cam[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * p_cam[..., 1] / z + intrinsics.cy
    return np.stack((u, v), axis=-1)


def unproject(intrinsics, pixel, depth):
    """ Camera-frame point at z-depth `depth` seen at `pixel` (u, v) """
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise NonPositiveDepth('Cannot unproject with depth <= 0')
    x = (pixel[..., 0] - intrinsics.cx) / intrinsics.fx * depth
    y = (pixel[..., 1] - intrinsics.cy) / intrinsics.fy * depth
    return np.stack((x, y, depth * np.ones_like(x)), axis=-1)


def pose_exp(xi):
    """ Pose of a 6-dim tangent vector [translation, axis-angle] """
    xi = np.asarray(xi, dtype=np.float64)
    return Pose(xi[:3], Quat.exp(xi[3:6]))


def pose_log(pose):
    """ Tangent vector of a pose, inverse of pose_exp """
    return np.concatenate((pose.translation, Quat.log(pose.rotation)))


def oplus(chart, delta):
    """ Move the chart pose by a tangent increment expressed at the chart """
    delta = np.asarray(delta, dtype=np.float64)
    return Pose(chart.translation + delta[:3],
                Quat.multiply(Quat.exp(delta[3:6]), chart.rotation))


def ominus(pose, chart):
    """ Tangent coordinates of `pose` in the chart at `chart` """
    rel = Quat.multiply(pose.rotation, Quat.conjugate(chart.rotation))
    return np.concatenate((pose.translation - chart.translation,
                           Quat.log(rel)))


def left_jacobian_inverse(phi):
    """ d Log(Exp(e) Exp(phi)) / d e at e = 0 """
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    hat = np.array([[0.0, -phi[2], phi[1]],
                    [phi[2], 0.0, -phi[0]],
                    [-phi[1], phi[0], 0.0]])
    if theta < 1e-8:
        return np.eye(3) - 0.5 * hat + hat @ hat / 12.0
    coef = 1.0 / theta ** 2 - (1 + np.cos(theta)) / (2 * theta
                                                      * np.sin(theta))
    return np.eye(3) - 0.5 * hat + coef * hat @ hat


def chart_jacobian(pose, chart):
    """ Jacobian of ominus(oplus(pose, e), chart) w.r.t. e at e = 0 """
    jac = np.eye(6)
    jac[3:, 3:] = left_jacobian_inverse(ominus(pose, chart)[3:])
    return jac


def rotation_distance(a, b):
    """ Angle in radians between the rotations of two poses """
    rel = Quat.multiply(a.rotation, Quat.conjugate(b.rotation))
    return Quat.angle(Quat.canonical(rel))


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """ Camera pose at `eye` looking at `target` (camera z forward, y down) """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(eye, Quat.from_matrix(np.stack((right, down, forward), 1)))
