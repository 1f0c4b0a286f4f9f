import numpy as np
import pytest

import slam_common.pipeline as pipeline
from slam_common.dynamics import TransitionParams, propagate_belief
from slam_common.errors import InvalidConfig, TrackingLost
from slam_common.evaluation import Trajectory, ate_rmse
from slam_common.geometry import Control
from slam_common.pipeline import (FilterConfig, initialize, run_sequence,
                                  step)
from slam_common.renderer import RenderParams, render_rgbd
from slam_common.tracker import StateBelief, TrackerParams
from slam_common.voxel_map import GridSpec, UpdateParams
from slam_common.worlds import (default_camera, render_ground_truth,
                                scenario, synthesize_sequence,
                                trajectory_twists, wall_scene)


def _wall_config(grid, pose, **kwargs):
    kwargs.setdefault('map_dtype', 'float64')
    return FilterConfig(
        grid=grid, render=RenderParams.for_grid(grid, 8.0, 0.1, 0.02),
        transition=TransitionParams(), tracker=TrackerParams(steps=50),
        update=UpdateParams.for_grid(grid, 2.0),
        initial_state=StateBelief.at_rest(pose),
        **kwargs)


@pytest.fixture
def wall_frames(small_camera, facing_x):
    def frames(count):
        return [render_ground_truth(wall_scene(2.0), facing_x, small_camera,
                                    0.1 * k) for k in range(count)]
    return frames


class TestFilterConfig:
    def test_invalid(self, wall_grid, facing_x):
        with pytest.raises(InvalidConfig):
            _wall_config(wall_grid, facing_x, render_period=0)
        with pytest.raises(InvalidConfig):
            _wall_config(wall_grid, facing_x, prior_stddev=0.0)


class TestInitialize:
    def test_fresh_map_is_the_prior(self, wall_grid, facing_x):
        config = _wall_config(wall_grid, facing_x, map_dtype='float32')
        state = initialize(config)
        assert state.map.mean.dtype == np.float32
        assert np.all(state.map.mean[0] == np.float32(-0.001))
        assert np.all(state.map.stddev == np.float32(1e3))
        assert state.belief is config.initial_state
        assert state.frame_index == 0

    def test_first_frame_is_fused(self, wall_grid, facing_x, wall_frames):
        config = _wall_config(wall_grid, facing_x)
        state = initialize(config, wall_frames(1)[0])
        assert state.frame_index == 1
        frame = render_rgbd(facing_x, state.map, wall_frames(1)[0].intrinsics,
                            config.render)
        crop = (slice(3, -3), slice(3, -3))
        assert frame.valid[crop].all()
        assert np.abs(frame.depth[crop] - 2.0).mean() <= 0.05


class TestStep:
    def test_lost_frame_coasts_on_the_prior(self, wall_grid, facing_x,
                                            wall_frames):
        config = _wall_config(wall_grid, facing_x)
        first, second = wall_frames(2)
        state = initialize(config, first)
        before = state.map.copy()
        blind = second.with_valid(np.zeros(second.shape, bool))
        result = step(state, blind)
        assert result.tracking_lost
        assert result.map_digest.updated_voxels == 0
        assert np.array_equal(state.map.mean, before.mean)
        assert np.array_equal(state.map.stddev, before.stddev)
        expected = propagate_belief(config.initial_state, Control.zero(),
                                    config.transition)
        assert np.allclose(result.state.covariance,
                           expected.state_prior.covariance, atol=1e-8)

    def test_strict_raises(self, wall_grid, facing_x, wall_frames):
        first, second = wall_frames(2)
        state = initialize(_wall_config(wall_grid, facing_x), first)
        with pytest.raises(TrackingLost):
            step(state, second.with_valid(np.zeros(second.shape, bool)),
                 strict=True)
        assert state.frame_index == 2

    def test_static_camera_shrinks_the_map_stddev(self, wall_grid, facing_x,
                                                  wall_frames):
        frames = wall_frames(4)
        state = initialize(_wall_config(wall_grid, facing_x), frames[0])
        voxel = (0, 19, 19, 19)
        assert state.map.stddev[voxel] == pytest.approx(1.0, rel=1e-3)
        for t, frame in enumerate(frames[1:], start=2):
            result = step(state, frame)
            assert not result.tracking_lost
            assert state.map.stddev[voxel] == pytest.approx(1 / np.sqrt(t),
                                                            rel=1e-3)

    def test_map_is_updated_at_the_posterior_mean(self, wall_grid, facing_x,
                                                  wall_frames, monkeypatch):
        first, second = wall_frames(2)
        state = initialize(_wall_config(wall_grid, facing_x), first)
        poses = []
        original = pipeline.compute_sdf_update

        def recording(*args, **kwargs):
            poses.append(args[3])
            return original(*args, **kwargs)

        monkeypatch.setattr(pipeline, 'compute_sdf_update', recording)
        result = step(state, second)
        assert len(poses) == 1
        assert poses[0] is result.state.mean_pose

    def test_timings_cover_every_stage(self, wall_grid, facing_x,
                                       wall_frames):
        first, second = wall_frames(2)
        state = initialize(_wall_config(wall_grid, facing_x), first)
        result = step(state, second)
        assert set(result.timings) == {'propagate', 'render', 'track',
                                       'laplace', 'map_update'}
        assert all(v >= 0 for v in result.timings.values())


class TestRunSequence:
    def test_single_frame(self, wall_grid, facing_x, wall_frames):
        config = _wall_config(wall_grid, facing_x)
        result = run_sequence(config, wall_frames(1))
        assert len(result.trajectory) == 1
        assert result.trajectory[0] is config.initial_state
        assert result.lost_frames == []
        assert len(result.timings) == 0

    def test_empty_sequence(self, wall_grid, facing_x):
        with pytest.raises(InvalidConfig):
            run_sequence(_wall_config(wall_grid, facing_x), [])

    def test_deterministic(self, wall_grid, facing_x, wall_frames):
        config = _wall_config(wall_grid, facing_x, seed=7)
        runs = [run_sequence(config, wall_frames(3)) for _ in range(2)]
        for a, b in zip(runs[0].trajectory, runs[1].trajectory):
            assert np.array_equal(a.mean_vector(), b.mean_vector())
            assert np.array_equal(a.covariance, b.covariance)
        assert np.array_equal(runs[0].map.mean, runs[1].map.mean)
        assert runs[0].timestamps == pytest.approx([0.0, 0.1, 0.2])


def _room_ate(depth_noise):
    camera = default_camera(60, 80, 8.0)
    scene, spec = scenario('room_orbit', 100, 0.1, camera,
                           depth_noise=depth_noise)
    grid = GridSpec.cube(14.0, 200)
    twists, _ = trajectory_twists(spec)
    config = FilterConfig(
        grid=grid, render=RenderParams.for_grid(grid, 8.0, 0.1, 0.02),
        transition=TransitionParams(), tracker=TrackerParams(),
        update=UpdateParams.for_grid(grid, 2.0),
        initial_state=StateBelief.at_rest(spec.poses[0], twists[0]),
        workers=4)
    result = run_sequence(config, synthesize_sequence(scene, spec, seed=0))
    estimated = Trajectory(np.array(result.timestamps),
                           [s.mean_pose for s in result.trajectory])
    truth = Trajectory(np.array(spec.timestamps), list(spec.poses))
    return ate_rmse(estimated, truth)


@pytest.mark.slow
class TestRoomOrbit:
    def test_noise_free(self):
        assert _room_ate(0.0) <= 0.05

    def test_depth_noise(self):
        assert _room_ate(0.01) <= 0.10
