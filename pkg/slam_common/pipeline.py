""" Per frame orchestration of the two marginal filters: propagate the state,
    track against a rendered anchor, fuse the velocity and update the map at
    the posterior mean.
"""

import logging
from dataclasses import dataclass, field
from time import perf_counter
from typing import NamedTuple

import numpy as np
import pandas as pd

from .beliefs import Gaussian
from .dynamics import TransitionParams, propagate_belief
from .enums import Stages
from .errors import EmptyUpdate, InvalidConfig, TrackingLost
from .geometry import Control, Pose, chart_jacobian, ominus
from .processing import ImgProc
from .renderer import RenderParams, render_rgbd
from .tracker import (Anchor, StateBelief, TrackerParams, fuse_velocity,
                      laplace_covariance, optimize_pose, smooth_covariance)
from .voxel_map import (GridSpec, UpdateParams, VoxelMapBelief, apply_update,
                        compute_sdf_update)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterConfig:
    """ Everything a run of the filter depends on """
    grid: GridSpec
    render: RenderParams
    transition: TransitionParams
    tracker: TrackerParams
    update: UpdateParams
    render_period: int = 1
    initial_state: StateBelief = None
    seed: int = 0
    workers: int = 1
    discontinuity_factor: float = 2.0
    prior_occupancy: float = -0.001
    prior_stddev: float = 1e3
    map_dtype: str = 'float32'

    def __post_init__(self):
        if self.render_period < 1:
            raise InvalidConfig('render_period must be >= 1')
        if self.workers < 1:
            raise InvalidConfig('workers must be >= 1')
        if self.prior_stddev <= 0:
            raise InvalidConfig('prior_stddev must be positive')
        if self.initial_state is None:
            object.__setattr__(self, 'initial_state',
                               StateBelief.at_rest(Pose.identity()))


@dataclass
class FilterState:
    """ Mutable filter memory; one writer at a time """
    config: FilterConfig
    map: VoxelMapBelief
    belief: StateBelief
    rng: np.random.Generator
    anchor: Anchor = None
    previous_covariance: np.ndarray = None
    frame_index: int = 0
    last_timestamp: float = None


class MapDigest(NamedTuple):
    updated_voxels: int
    mean_stddev: float


@dataclass
class StepResult:
    state: StateBelief
    map_digest: MapDigest
    objective: float = float('nan')
    valid_fraction: float = 0.0
    timings: dict = field(default_factory=dict)
    tracking_lost: bool = False


@dataclass
class SequenceResult:
    trajectory: list
    map: VoxelMapBelief
    timings: pd.DataFrame
    lost_frames: list
    timestamps: list


def preprocess(frame, config):
    """ Drop pixels on depth discontinuities """
    threshold = config.discontinuity_factor * config.update.truncation
    return frame.with_valid(ImgProc.smooth_depth_mask(frame.depth,
                                                      frame.valid, threshold))


def _fuse(state, frame, pose):
    config = state.config
    try:
        update = compute_sdf_update(frame.depth, frame.color, frame.valid,
                                    pose, frame.intrinsics, config.grid,
                                    config.update, config.workers)
    except EmptyUpdate as exc:
        logger.warning('Map update skipped: %s', exc)
        return 0
    apply_update(state.map, update, inplace=True)
    return len(update)


def initialize(config, first_frame=None):
    """ Prior map and the known first state. A first frame, if given, is
        fused at the initial pose before any tracking happens.
    """
    grid = VoxelMapBelief.prior(config.grid, config.prior_occupancy,
                                config.prior_stddev,
                                np.dtype(config.map_dtype))
    state = FilterState(config, grid, config.initial_state,
                        np.random.default_rng(config.seed))
    if first_frame is not None:
        frame = preprocess(first_frame, config)
        count = _fuse(state, frame, config.initial_state.mean_pose)
        state.last_timestamp = frame.timestamp
        state.frame_index = 1
        logger.info('Fused first frame into %d voxels', count)
    return state


def _step_dt(state, frame):
    default = state.config.transition.dt
    if state.last_timestamp is None:
        return default
    dt = frame.timestamp - state.last_timestamp
    return dt if dt > 0 else default


def step(state, obs, control=None, strict=False):
    """ One filter step. On TrackingLost the state coasts on the propagated
        prior and the map is left untouched; with `strict` the error is
        raised after that.
    """
    config = state.config
    timings = {str(s): 0.0 for s in Stages}
    obs = preprocess(obs, config)
    control = Control.zero() if control is None else control

    tic = perf_counter()
    transition = config.transition.with_dt(_step_dt(state, obs))
    prop = propagate_belief(state.belief, control, transition)
    timings[str(Stages.PROPAGATE)] = perf_counter() - tic

    tic = perf_counter()
    if state.anchor is None or state.frame_index % config.render_period == 0:
        pose = state.belief.mean_pose
        rendered = render_rgbd(pose, state.map, obs.intrinsics, config.render,
                               obs.timestamp, config.workers)
        state.anchor = Anchor.from_frame(rendered, pose,
                                         config.tracker.normal_max_jump)
    timings[str(Stages.RENDER)] = perf_counter() - tic

    result = StepResult(state=None, map_digest=None, timings=timings)
    lost = None
    try:
        tic = perf_counter()
        tracked = optimize_pose(obs, state.anchor, prop.pose_prior,
                                prop.chart, config.tracker, config.render,
                                state.rng)
        timings[str(Stages.TRACK)] = perf_counter() - tic

        tic = perf_counter()
        cov = laplace_covariance(tracked.pose, obs, state.anchor,
                                 prop.pose_prior, prop.chart, config.tracker,
                                 config.render)
        cov = smooth_covariance(cov, state.previous_covariance,
                                config.tracker.laplace_ema)
        state.previous_covariance = cov
        to_chart = chart_jacobian(tracked.pose, prop.chart)
        pose_belief = Gaussian(ominus(tracked.pose, prop.chart),
                               to_chart @ cov @ to_chart.T)
        state.belief = fuse_velocity(pose_belief, prop.vel_given_pose,
                                     prop.chart)
        timings[str(Stages.LAPLACE)] = perf_counter() - tic
        result.objective = tracked.objective
        result.valid_fraction = tracked.valid_fraction
    except TrackingLost as exc:
        logger.warning('Frame %d: tracking lost (%s), coasting on the prior',
                       state.frame_index, exc)
        state.belief = fuse_velocity(prop.pose_prior, prop.vel_given_pose,
                                     prop.chart)
        result.tracking_lost = True
        lost = exc

    tic = perf_counter()
    count = 0 if lost else _fuse(state, obs, state.belief.mean_pose)
    timings[str(Stages.MAP_UPDATE)] = perf_counter() - tic

    state.frame_index += 1
    state.last_timestamp = obs.timestamp
    result.state = state.belief
    result.map_digest = MapDigest(count, state.map.mean_stddev())
    logger.info('Frame %d: t=%s, valid %.2f, %d voxels updated',
                state.frame_index - 1,
                np.round(state.belief.mean_pose.translation, 4),
                result.valid_fraction, count)
    if lost is not None and strict:
        raise lost
    return result


def _unpack(item):
    if isinstance(item, tuple):
        return item[0], item[1] if len(item) > 1 else None
    return item, None


def run_sequence(config, frames, progress=None):
    """ initialize on the first frame, then step through the rest.
        `frames` yields RgbdFrame or (RgbdFrame, Control | None, ...) tuples;
        `progress` optionally wraps the iterator (e.g. tqdm).
    """
    iterator = iter(frames)
    try:
        first, _ = _unpack(next(iterator))
    except StopIteration:
        raise InvalidConfig('Cannot run on an empty sequence')
    state = initialize(config, first)
    trajectory = [state.belief]
    timestamps = [first.timestamp]
    rows, lost_frames = [], []
    remaining = progress(iterator) if progress else iterator
    for item in remaining:
        frame, control = _unpack(item)
        result = step(state, frame, control)
        trajectory.append(result.state)
        timestamps.append(frame.timestamp)
        rows.append(result.timings)
        if result.tracking_lost:
            lost_frames.append(len(trajectory) - 1)
    timings = pd.DataFrame(rows, columns=[str(s) for s in Stages])
    timings.index.name = 'frame'
    timings.index += 1
    return SequenceResult(trajectory, state.map, timings, lost_frames,
                          timestamps)
