""" Emission model: raymarching the map mean into an expected RGB-D image and
    the Laplace likelihood of an observation around it.
"""

import logging
from dataclasses import dataclass, replace
from multiprocessing.pool import ThreadPool
from typing import NamedTuple

import numpy as np

from .errors import InvalidConfig, ShapeMismatch
from .geometry import CameraIntrinsics
from .voxel_map import sample_channels

logger = logging.getLogger(__name__)

MARCH_POINTS = 1 << 20


@dataclass(frozen=True)
class RgbdFrame:
    """ Registered depth (z-depth, meters) and color ([0, 1]) images. Pixels
        outside `valid` carry depth 0 and are ignored by every consumer
    """
    depth: np.ndarray
    color: np.ndarray
    valid: np.ndarray
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.shape != self.intrinsics.shape:
            raise ShapeMismatch('Depth {} does not match intrinsics {}'
                                .format(depth.shape, self.intrinsics.shape))
        color = np.asarray(self.color, dtype=np.float64)
        if color.shape != depth.shape + (3,):
            raise ShapeMismatch('Color must be {}x3'.format(depth.shape))
        with np.errstate(invalid='ignore'):
            valid = np.asarray(self.valid, dtype=bool) & np.isfinite(depth) \
                & (depth > 0) & (depth <= self.intrinsics.max_depth)
        object.__setattr__(self, 'depth', np.where(valid, depth, 0.0))
        object.__setattr__(self, 'color', color)
        object.__setattr__(self, 'valid', valid)
        object.__setattr__(self, 'timestamp', float(self.timestamp))

    @property
    def shape(self):
        return self.depth.shape

    def with_valid(self, mask):
        return replace(self, valid=self.valid & mask)


@dataclass(frozen=True)
class RenderParams:
    """ Ray step (m), hit threshold on occupancy, max depth (m) and the
        Laplace emission scales
    """
    step_eps: float
    max_depth: float
    sigma_color: float
    sigma_geo: float
    tau: float = 0.0

    def __post_init__(self):
        if self.step_eps <= 0 or self.max_depth <= 0:
            raise InvalidConfig('step_eps and max_depth must be positive')
        if self.sigma_color <= 0 or self.sigma_geo <= 0:
            raise InvalidConfig('Emission scales must be positive')

    @classmethod
    def for_grid(cls, spec, max_depth, sigma_color, sigma_geo, step_ratio=0.4,
                 tau=0.0):
        return cls(step_ratio * spec.voxel_size, max_depth, sigma_color,
                   sigma_geo, tau)


class RayBundle(NamedTuple):
    origin: np.ndarray
    directions: np.ndarray
    z_per_range: np.ndarray


def generate_rays(pose, intrinsics):
    """ One unit world direction per pixel, all starting at the camera
        center. `z_per_range` converts a distance along a ray to z-depth.
    """
    u, v = intrinsics.pixel_grid()
    cam = np.stack(((u - intrinsics.cx) / intrinsics.fx,
                    (v - intrinsics.cy) / intrinsics.fy,
                    np.ones_like(u)), axis=-1)
    norm = np.linalg.norm(cam, axis=-1)
    cam /= norm[..., None]
    directions = cam @ pose.rotation_matrix.T
    return RayBundle(pose.translation.copy(), directions, 1.0 / norm)


def _march_chunk(args):
    belief, origin, directions, params = args
    count = int(np.floor(params.max_depth / params.step_eps + 1e-9))
    ranges = params.step_eps * np.arange(1, count + 1)
    points = origin + ranges[None, :, None] * directions[:, None, :]
    occ = sample_channels(belief, points, channels=(0,))[..., 0]
    inside = belief.spec.inside(points.reshape(-1, 3)).reshape(occ.shape)
    hit = (occ >= params.tau) & inside
    first = np.argmax(hit, axis=1)
    found = hit[np.arange(len(first)), first]

    out = np.full(len(first), np.nan)
    at_start = found & (first == 0)
    out[at_start] = params.step_eps
    bracket = found & (first > 0)
    rows = np.flatnonzero(bracket)
    k = first[rows]
    f0, f1 = occ[rows, k - 1], occ[rows, k]
    alpha = np.clip((params.tau - f0) / (f1 - f0), 0.0, 1.0)
    out[rows] = alpha * ranges[k] + (1.0 - alpha) * ranges[k - 1]
    return out


def march(belief, origin, directions, params, workers=1):
    """ Range of the first tau crossing along each ray, NaN where there is
        none within max_depth (or inside the grid)
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    count = max(1, int(np.floor(params.max_depth / params.step_eps)))
    chunk = max(1, MARCH_POINTS // count)
    jobs = [(belief, np.asarray(origin, dtype=np.float64),
             directions[start:start + chunk], params)
            for start in range(0, len(directions), chunk)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPool(workers) as pool:
            parts = pool.map(_march_chunk, jobs)
    else:
        parts = list(map(_march_chunk, jobs))
    return np.concatenate(parts) if parts else np.zeros(0)


def raymarch_hit(origin, direction, belief, params):
    """ Distance along a single unit ray to the interpolated surface, or None
        when the ray never reaches the threshold
    """
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    dist = march(belief, origin, direction[None], params)[0]
    return None if np.isnan(dist) else float(dist)


def render_rgbd(pose, belief, intrinsics, params, timestamp=0.0, workers=1):
    """ Expected RGB-D image of the map mean seen from `pose` """
    rays = generate_rays(pose, intrinsics)
    dist = march(belief, rays.origin, rays.directions, params,
                 workers).reshape(intrinsics.shape)
    hit = ~np.isnan(dist)
    depth = np.where(hit, dist, 0.0) * rays.z_per_range
    color = np.zeros(intrinsics.shape + (3,))
    if hit.any():
        points = rays.origin + dist[hit][:, None] * rays.directions[hit]
        color[hit] = np.clip(sample_channels(belief, points,
                                             channels=(1, 2, 3)), 0.0, 1.0)
    logger.debug('Rendered %d of %d pixels', hit.sum(), hit.size)
    return RgbdFrame(depth, color, hit & (depth <= params.max_depth),
                     intrinsics, timestamp)


def emission_loglik(obs, rendered, params):
    """ Laplace log-likelihood of `obs` around the rendered mean, summed over
        the pixels valid in both frames
    """
    if obs.shape != rendered.shape:
        raise ShapeMismatch('Frames {} and {} differ'.format(obs.shape,
                                                             rendered.shape))
    both = obs.valid & rendered.valid
    geo = np.abs(obs.depth[both] - rendered.depth[both])
    photo = np.abs(obs.color[both] - rendered.color[both])
    loglik = -np.sum(geo) / params.sigma_geo \
        - geo.size * np.log(2 * params.sigma_geo)
    loglik -= np.sum(photo) / params.sigma_color \
        + photo.size * np.log(2 * params.sigma_color)
    return float(loglik)


def unproject_frame(frame):
    """ Camera-frame points of every pixel, (H, W, 3); invalid pixels give
        zeros
    """
    k = frame.intrinsics
    u, v = k.pixel_grid()
    return np.stack(((u - k.cx) / k.fx * frame.depth,
                     (v - k.cy) / k.fy * frame.depth, frame.depth), axis=-1)


def compute_normals(frame, max_jump=0.1):
    """ Camera-frame normals from central differences of the unprojected
        depth, oriented toward the camera. Pixels next to invalid pixels or
        to a depth jump above `max_jump` (m) get no normal.

        Returns points (H, W, 3), normals (H, W, 3) and the validity mask.
    """
    points = unproject_frame(frame)
    valid = frame.valid.copy()
    ok = np.zeros_like(valid)
    core = (slice(1, -1), slice(1, -1))
    depth = frame.depth
    centre = depth[core]
    neighbours = (depth[1:-1, 2:], depth[1:-1, :-2], depth[2:, 1:-1],
                  depth[:-2, 1:-1])
    masks = (valid[1:-1, 2:], valid[1:-1, :-2], valid[2:, 1:-1],
             valid[:-2, 1:-1])
    ok[core] = valid[core]
    for other, mask in zip(neighbours, masks):
        ok[core] &= mask & (np.abs(other - centre) <= max_jump)

    normals = np.zeros_like(points)
    d_u = points[1:-1, 2:] - points[1:-1, :-2]
    d_v = points[2:, 1:-1] - points[:-2, 1:-1]
    cross = np.cross(d_u, d_v)
    norm = np.linalg.norm(cross, axis=-1)
    ok[core] &= norm > 1e-12
    cross /= np.where(norm > 0, norm, 1.0)[..., None]
    facing = np.sum(cross * points[core], axis=-1) > 0
    cross[facing] *= -1
    normals[core] = cross
    normals[~ok] = 0.0
    return points, normals, ok
