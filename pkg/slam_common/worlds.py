""" Synthetic ground-truth worlds and dataset ingestion: the observation
    sources the filter runs on.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateTrajectory, InvalidConfig
from .geometry import CameraIntrinsics, Control, Twist, look_at, ominus
from .generator import TumSequence
from .processing import ImgProc
from .renderer import RgbdFrame, generate_rays

logger = logging.getLogger(__name__)

TUM_CAMERA = {'fx': 525.0, 'fy': 525.0, 'cx': 319.5, 'cy': 239.5,
              'width': 640, 'height': 480}


def _checker(points, albedo, period):
    if not period:
        return np.broadcast_to(albedo, points.shape).copy()
    parity = np.sum(np.floor(points / period), axis=-1) % 2
    return albedo * np.where(parity == 0, 1.0, 0.5)[:, None]


@dataclass(frozen=True)
class Box:
    """ Axis aligned box, `size` holds the full edge lengths """
    center: tuple
    size: tuple
    albedo: tuple = (0.5, 0.5, 0.5)
    checker: float = 0.0

    def sdf(self, points):
        q = np.abs(points - np.array(self.center)) - np.array(self.size) / 2
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def intersect(self, origin, directions):
        """ Smallest positive ray parameter of the box surface, inf on miss """
        low = np.array(self.center) - np.array(self.size) / 2
        high = np.array(self.center) + np.array(self.size) / 2
        with np.errstate(divide='ignore', invalid='ignore'):
            t1 = (low - origin) / directions
            t2 = (high - origin) / directions
        # axis parallel rays: inside the slab -> unbounded, else no hit
        parallel = directions == 0
        slab = (origin >= low) & (origin <= high)
        t1 = np.where(parallel, np.where(slab, -np.inf, np.inf), t1)
        t2 = np.where(parallel, np.where(slab, np.inf, -np.inf), t2)
        near = np.max(np.minimum(t1, t2), axis=-1)
        far = np.min(np.maximum(t1, t2), axis=-1)
        hit = (near <= far) & (far > 0)
        t = np.where(near > 0, near, far)
        return np.where(hit, t, np.inf)

    def bounds(self):
        half = np.array(self.size) / 2
        return np.array(self.center) - half, np.array(self.center) + half

    def color(self, points):
        return _checker(points, np.array(self.albedo), self.checker)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple = (0.5, 0.5, 0.5)
    checker: float = 0.0

    def sdf(self, points):
        return np.linalg.norm(points - np.array(self.center), axis=-1) \
            - self.radius

    def intersect(self, origin, directions):
        oc = origin - np.array(self.center)
        b = directions @ oc
        c = oc @ oc - self.radius ** 2
        disc = b ** 2 - c
        root = np.sqrt(np.maximum(disc, 0.0))
        near, far = -b - root, -b + root
        t = np.where(near > 0, near, far)
        return np.where((disc >= 0) & (far > 0), t, np.inf)

    def bounds(self):
        return np.array(self.center) - self.radius, \
            np.array(self.center) + self.radius

    def color(self, points):
        return _checker(points, np.array(self.albedo), self.checker)


@dataclass(frozen=True)
class SyntheticScene:
    """ Union of primitives inside an axis aligned bounding region """
    primitives: tuple
    origin: tuple = (-7.0, -7.0, -7.0)
    extent: tuple = (14.0, 14.0, 14.0)

    def __post_init__(self):
        if not self.primitives:
            raise InvalidConfig('A scene needs at least one primitive')
        low = np.array(self.origin)
        high = low + np.array(self.extent)
        for prim in self.primitives:
            p_low, p_high = prim.bounds()
            if np.any(p_low < low - 1e-9) or np.any(p_high > high + 1e-9):
                raise InvalidConfig('Primitive {} leaves the scene bounds'
                                    .format(prim))
        object.__setattr__(self, 'primitives', tuple(self.primitives))


@dataclass(frozen=True)
class SequenceSpec:
    """ Camera trajectory with strictly increasing timestamps """
    timestamps: tuple
    poses: tuple
    camera: CameraIntrinsics
    depth_noise: float = 0.0
    color_noise: float = 0.0
    velocity_dt_power: float = 2.0
    extra: dict = field(default_factory=dict)


class SyntheticFrame(NamedTuple):
    frame: RgbdFrame
    control: Control
    pose: object
    twist: Twist


def scene_sdf(scene, points):
    """ Euclidean SDF of the primitive union and the albedo of the nearest
        primitive, for one (3,) point or an (N, 3) array
    """
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, 3)
    dists = np.stack([p.sdf(flat) for p in scene.primitives])
    nearest = np.argmin(dists, axis=0)
    albedo = np.zeros((len(flat), 3))
    for k, prim in enumerate(scene.primitives):
        sel = nearest == k
        if sel.any():
            albedo[sel] = prim.color(flat[sel])
    dist = dists[nearest, np.arange(len(flat))]
    if points.ndim == 1:
        return float(dist[0]), albedo[0]
    return dist.reshape(points.shape[:-1]), albedo.reshape(points.shape)


def render_ground_truth(scene, pose, intrinsics, timestamp=0.0):
    """ Exact first-hit depth and albedo by analytic ray intersection """
    rays = generate_rays(pose, intrinsics)
    dirs = rays.directions.reshape(-1, 3)
    hits = np.stack([p.intersect(rays.origin, dirs)
                     for p in scene.primitives])
    first = np.argmin(hits, axis=0)
    dist = hits[first, np.arange(len(dirs))]
    found = np.isfinite(dist)
    color = np.zeros((len(dirs), 3))
    for k, prim in enumerate(scene.primitives):
        sel = found & (first == k)
        if sel.any():
            color[sel] = prim.color(rays.origin + dist[sel, None] * dirs[sel])
    depth = np.where(found, dist, 0.0).reshape(intrinsics.shape) \
        * rays.z_per_range
    return RgbdFrame(depth, color.reshape(intrinsics.shape + (3,)),
                     found.reshape(intrinsics.shape), intrinsics, timestamp)


def trajectory_twists(spec):
    """ Velocities that make the Euler transition reproduce the poses:
        v_t = (p_t (-) p_{t-1}) / dt; the first frame reuses v_1
    """
    stamps = np.asarray(spec.timestamps, dtype=np.float64)
    if len(stamps) != len(spec.poses):
        raise InvalidConfig('One timestamp per pose is required')
    dts = np.diff(stamps)
    if np.any(dts <= 0):
        raise DegenerateTrajectory('Timestamps must be strictly increasing')
    twists = [Twist.from_vector(ominus(b, a) / dt)
              for a, b, dt in zip(spec.poses[:-1], spec.poses[1:], dts)]
    return [twists[0] if twists else Twist.zero()] + twists, dts


def synthesize_sequence(scene, spec, seed=0):
    """ Yields frame, control u_{t-1}, ground-truth pose and twist. The
        controls are the inverse of the velocity update, so the transition
        reproduces the trajectory exactly without noise.
    """
    twists, dts = trajectory_twists(spec)
    rng = np.random.default_rng(seed)
    for t, (stamp, pose) in enumerate(zip(spec.timestamps, spec.poses)):
        if t == 0:
            control = Control.zero()
        else:
            scale = dts[t - 1] ** spec.velocity_dt_power
            control = Control.from_vector(
                (twists[t].as_vector() - twists[t - 1].as_vector()) / scale)
        frame = render_ground_truth(scene, pose, spec.camera, stamp)
        if spec.depth_noise > 0 or spec.color_noise > 0:
            depth = frame.depth + rng.normal(0.0, spec.depth_noise,
                                             frame.shape) * frame.valid \
                if spec.depth_noise > 0 else frame.depth
            color = np.clip(frame.color + rng.normal(
                0.0, spec.color_noise, frame.color.shape), 0, 1) \
                if spec.color_noise > 0 else frame.color
            frame = RgbdFrame(depth, color, frame.valid, frame.intrinsics,
                              stamp)
        yield SyntheticFrame(frame, control, pose, twists[t])


def default_camera(height, width, max_depth):
    """ TUM-like field of view at the given image size """
    factor = width / TUM_CAMERA['width']
    return CameraIntrinsics(TUM_CAMERA['fx'] * factor,
                            TUM_CAMERA['fy'] * factor, (width - 1) / 2.0,
                            (height - 1) / 2.0, width, height, max_depth)


def room_scene():
    wall = (0.85, 0.8, 0.7)
    return SyntheticScene((
        Box((0.0, 0.0, -0.05), (8.0, 8.0, 0.1), (0.7, 0.7, 0.7), 0.5),
        Box((4.05, 0.0, 1.5), (0.1, 8.0, 3.0), wall, 0.5),
        Box((-4.05, 0.0, 1.5), (0.1, 8.0, 3.0), wall, 0.5),
        Box((0.0, 4.05, 1.5), (8.0, 0.1, 3.0), (0.6, 0.7, 0.85), 0.5),
        Box((0.0, -4.05, 1.5), (8.0, 0.1, 3.0), (0.6, 0.7, 0.85), 0.5),
        Box((1.0, 0.5, 0.4), (0.8, 0.8, 0.8), (0.9, 0.3, 0.2), 0.2),
        Box((0.0, -1.5, 0.25), (1.2, 0.6, 0.5), (0.2, 0.5, 0.9), 0.2),
        Sphere((-1.0, -0.8, 0.5), 0.5, (0.3, 0.8, 0.3), 0.2)))


def floor_scene():
    return SyntheticScene((Box((0.0, 0.0, -0.05), (10.0, 10.0, 0.1),
                               (0.6, 0.6, 0.6)),))


def wall_scene(distance=2.0):
    """ Textureless wall whose front face is the plane x = distance """
    return SyntheticScene((Box((distance + 0.05, 0.0, 0.0), (0.1, 10.0, 10.0),
                               (0.6, 0.6, 0.6)),))


def orbit_poses(frames, radius=2.0, height=1.2, arc=np.pi / 2,
                target=(0.0, 0.0, 0.4)):
    angles = np.linspace(0.0, arc, frames)
    return tuple(look_at((radius * np.cos(a), radius * np.sin(a), height),
                         target) for a in angles)


def scenario(name, frames, dt, camera, depth_noise=0.0, color_noise=0.0,
             velocity_dt_power=2.0):
    """ Named scene and trajectory presets """
    stamps = tuple(dt * np.arange(frames))
    if name == 'room_orbit':
        scene, poses = room_scene(), orbit_poses(frames)
    elif name == 'floor_view':
        poses = tuple(look_at((0.02 * k, 0.0, 1.5), (0.02 * k + 1.0, 0.0, 0.0))
                      for k in range(frames))
        scene = floor_scene()
    elif name == 'wall':
        poses = tuple(look_at((0.0, 0.01 * k, 0.0), (1.0, 0.01 * k, 0.0))
                      for k in range(frames))
        scene = wall_scene()
    else:
        raise InvalidConfig('Unknown scenario ' + str(name))
    return scene, SequenceSpec(stamps, poses, camera, depth_noise,
                               color_noise, velocity_dt_power)


def _primitive(entry):
    kind = entry.get('type')
    common = {'albedo': tuple(entry.get('albedo', (0.5, 0.5, 0.5))),
              'checker': float(entry.get('checker', 0.0))}
    if kind == 'box':
        return Box(tuple(entry['center']), tuple(entry['size']), **common)
    if kind == 'sphere':
        return Sphere(tuple(entry['center']), float(entry['radius']),
                      **common)
    raise InvalidConfig('Unknown primitive type {}'.format(kind))


def load_scene(path):
    """ Scene from a JSON file:
        {"origin": [x, y, z], "extent": [ex, ey, ez],
         "primitives": [{"type": "box", "center": [...], "size": [...],
                         "albedo": [r, g, b], "checker": 0.5},
                        {"type": "sphere", "center": [...], "radius": r}]}
    """
    with open(str(path), 'r') as scene_file:
        data = json.load(scene_file)
    try:
        prims = tuple(_primitive(p) for p in data['primitives'])
    except KeyError as exc:
        raise InvalidConfig('{}: primitive lacks {}'.format(path, exc))
    return SyntheticScene(prims, tuple(data.get('origin', (-7.0,) * 3)),
                          tuple(data.get('extent', (14.0,) * 3)))


def load_tum_rgbd(directory, image_size=(120, 160), max_depth=8.0,
                  camera=None):
    """ Yields (frame, None, ground-truth pose or None) for every associated
        rgb/depth pair, box-downsampled to `image_size`
    """
    sequence = TumSequence(directory)
    camera = dict(TUM_CAMERA, **(camera or {}))
    factor = camera['height'] // image_size[0]
    if factor < 1 or camera['width'] // factor != image_size[1]:
        raise InvalidConfig('Cannot downsample {}x{} to {}'.format(
            camera['height'], camera['width'], image_size))
    intrinsics = CameraIntrinsics(
        camera['fx'], camera['fy'], camera['cx'], camera['cy'],
        camera['width'], camera['height'], max_depth).scaled(factor)
    entries = list(sequence.entries())
    truths = sequence.groundtruth_poses([e[0] for e in entries])
    logger.info('%s: %d frames at %dx%d', Path(directory).name, len(entries),
                *intrinsics.shape)
    for (stamp, rgb_path, depth_path), truth in zip(entries, truths):
        depth = ImgProc.downsample_depth(ImgProc.load_depth(depth_path),
                                         factor)
        color = ImgProc.downsample_color(ImgProc.load_color(rgb_path), factor)
        yield RgbdFrame(depth, color, depth > 0, intrinsics, stamp), None, \
            truth
