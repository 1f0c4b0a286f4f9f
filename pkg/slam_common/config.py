""" Run configuration: a nested JSON document merged over the defaults of a
    dataset profile and turned into frozen dataclasses.
"""

import copy
import json
import logging
from dataclasses import dataclass, field

from .dynamics import TransitionParams
from .enums import Profiles
from .errors import InvalidConfig
from .geometry import Pose, Twist
from .pipeline import FilterConfig
from .renderer import RenderParams
from .tracker import StateBelief, TrackerParams
from .voxel_map import GridSpec, UpdateParams

logger = logging.getLogger(__name__)

# None marks a value taken from the dataset profile
DEFAULTS = {
    'run_spec': {
        'profile': 'synthetic', 'seed': 0, 'workers': 1,
        'out_folder': 'out', 'render_period': 1, 'dt': 0.1,
        'max_frames': 0,
    },
    'filter': {
        'grid': {'resolution': 200, 'center': [0.0, 0.0, 0.0],
                 'extent': None, 'dtype': 'float32'},
        'render': {'step_ratio': 0.4, 'tau': 0.0, 'max_depth': None,
                   'sigma_color': None, 'sigma_geo': None},
        'transition': {'vel_translation': 0.03, 'vel_rotation': 0.03,
                       'pose_translation': 0.05, 'pose_rotation': 0.02,
                       'velocity_dt_power': 2.0},
        'tracker': {'steps': 1000, 'lr_translation': 0.001,
                    'lr_rotation': 0.00036, 'pixel_samples': 200,
                    'geo_outlier': 0.45, 'photo_outlier': 0.15,
                    'laplace_ema': 0.8, 'damping': 1e-8,
                    'optimizer': 'adam', 'normal_max_jump': 0.1,
                    'fd_step': 1e-6},
        'update': {'trunc_voxels': None, 'sigma_update': 1.0,
                   'prior_occupancy': -0.001, 'prior_stddev': 1000.0,
                   'discontinuity_factor': 2.0},
        'initial_state': {'translation': None, 'rotation': None,
                          'pose_stddev': 1e-3, 'velocity_stddev': 1e-3},
        'image_size': None,
    },
    'camera': {'fx': 525.0, 'fy': 525.0, 'cx': 319.5, 'cy': 239.5,
               'width': 640, 'height': 480},
    'synthetic': {'scenario': 'room_orbit', 'frames': 100,
                  'depth_noise': 0.0, 'color_noise': 0.0,
                  'scene_file': None},
}

PROFILE_KEYS = {
    ('filter', 'grid', 'extent'): 'extent',
    ('filter', 'render', 'max_depth'): 'max_depth',
    ('filter', 'render', 'sigma_color'): 'sigma_color',
    ('filter', 'render', 'sigma_geo'): 'sigma_geo',
    ('filter', 'update', 'trunc_voxels'): 'trunc_voxels',
    ('filter', 'image_size'): 'image_size',
}


@dataclass(frozen=True)
class RunSpec:
    profile: str
    seed: int
    workers: int
    out_folder: str
    render_period: int
    dt: float
    max_frames: int


@dataclass(frozen=True)
class RunConfig:
    run_spec: RunSpec
    filter: FilterConfig
    image_size: tuple
    camera: dict
    synthetic: dict
    effective: dict = field(repr=False, default_factory=dict)


def _check_keys(data, reference, prefix=''):
    if not isinstance(data, dict):
        raise InvalidConfig('{} must be an object'.format(prefix or 'config'))
    for key, value in data.items():
        path = prefix + key
        if key not in reference:
            raise InvalidConfig('Unknown key ' + path)
        if isinstance(reference[key], dict):
            _check_keys(value, reference[key], path + '.')


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def read_config_file(path):
    """ Parsed JSON document; syntax errors report line and column """
    with open(str(path), 'r') as config_file:
        try:
            return json.load(config_file)
        except json.JSONDecodeError as exc:
            raise InvalidConfig('{}:{}:{}: {}'.format(path, exc.lineno,
                                                      exc.colno, exc.msg))


def merge_config(data=None, overrides=None):
    """ Defaults <- profile <- file <- overrides, as a plain nested dict """
    data = data or {}
    overrides = overrides or {}
    _check_keys(data, DEFAULTS)
    _check_keys(overrides, DEFAULTS)
    merged = _merge(_merge(copy.deepcopy(DEFAULTS), data), overrides)
    try:
        profile = Profiles(merged['run_spec']['profile'])
    except (KeyError, ValueError):
        raise InvalidConfig('run_spec.profile: unknown profile {}'.format(
            merged['run_spec']['profile']))
    merged['run_spec']['profile'] = str(profile)
    for keys, name in PROFILE_KEYS.items():
        section = merged
        for key in keys[:-1]:
            section = section[key]
        if section[keys[-1]] is None:
            value = profile.value[name]
            section[keys[-1]] = list(value) if isinstance(value, tuple) \
                else value
    return merged


def _section(path, build):
    try:
        return build()
    except (InvalidConfig, TypeError, ValueError) as exc:
        raise InvalidConfig('{}: {}'.format(path, exc))


def _initial_state(spec, default_pose=None, default_velocity=None):
    pose = default_pose or Pose.identity()
    if spec['translation'] is not None or spec['rotation'] is not None:
        pose = Pose(spec['translation'] or pose.translation,
                    spec['rotation'] or pose.rotation)
    return StateBelief.at_rest(pose, default_velocity or Twist.zero(),
                               spec['pose_stddev'], spec['velocity_stddev'])


def build_filter_config(merged, initial_pose=None, initial_velocity=None):
    """ FilterConfig of a merged document. The initial pose/velocity, when
        known from the data, fill the unset initial_state entries.
    """
    run, filt = merged['run_spec'], merged['filter']
    grid_cfg = filt['grid']
    grid = _section('filter.grid', lambda: GridSpec.cube(
        float(grid_cfg['extent']), int(grid_cfg['resolution']),
        grid_cfg['center']))
    rnd = filt['render']
    render = _section('filter.render', lambda: RenderParams.for_grid(
        grid, rnd['max_depth'], rnd['sigma_color'], rnd['sigma_geo'],
        rnd['step_ratio'], rnd['tau']))
    trans = filt['transition']
    transition = _section('filter.transition', lambda: TransitionParams
                          .isotropic(run['dt'], **trans))
    tracker = _section('filter.tracker',
                       lambda: TrackerParams(**filt['tracker']))
    upd = filt['update']
    update = _section('filter.update', lambda: UpdateParams.for_grid(
        grid, upd['trunc_voxels'], upd['sigma_update']))
    initial = _section('filter.initial_state', lambda: _initial_state(
        filt['initial_state'], initial_pose, initial_velocity))
    if grid_cfg['dtype'] not in ('float32', 'float64'):
        raise InvalidConfig('filter.grid.dtype must be float32 or float64')
    return _section('run_spec', lambda: FilterConfig(
        grid, render, transition, tracker, update,
        render_period=int(run['render_period']), initial_state=initial,
        seed=int(run['seed']), workers=int(run['workers']),
        discontinuity_factor=float(upd['discontinuity_factor']),
        prior_occupancy=float(upd['prior_occupancy']),
        prior_stddev=float(upd['prior_stddev']),
        map_dtype=grid_cfg['dtype']))


def load_config(path=None, overrides=None, initial_pose=None,
                initial_velocity=None):
    """ RunConfig from an optional JSON file and nested overrides """
    data = read_config_file(path) if path else {}
    merged = merge_config(data, overrides)
    filter_config = build_filter_config(merged, initial_pose,
                                        initial_velocity)
    run_spec = _section('run_spec', lambda: RunSpec(**merged['run_spec']))
    image_size = tuple(int(x) for x in merged['filter']['image_size'])
    logger.debug('Effective config: %s', merged)
    return RunConfig(run_spec, filter_config, image_size, merged['camera'],
                     merged['synthetic'], merged)


def config_to_dict(run_config):
    """ Effective configuration; loading it back reproduces the run """
    return copy.deepcopy(run_config.effective)


def with_initial_state(run_config, pose, velocity=None):
    """ The same run with x_1 taken from the data """
    filter_config = build_filter_config(run_config.effective, pose, velocity)
    return RunConfig(run_config.run_spec, filter_config,
                     run_config.image_size, run_config.camera,
                     run_config.synthetic, run_config.effective)
