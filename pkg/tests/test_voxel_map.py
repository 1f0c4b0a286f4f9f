import numpy as np
import pytest

from slam_common.errors import (EmptyUpdate, IndexOutOfRange, InvalidConfig,
                                OutOfBounds, SnapshotFormatError)
from slam_common.geometry import look_at
from slam_common.voxel_map import (CHANNELS, HEADER_BYTES, PRIOR_STDDEV,
                                   GridSpec, MapUpdate, VoxelMapBelief,
                                   apply_update, compute_sdf_update,
                                   load_map, merge_updates, sample_channels,
                                   save_map, trilinear_sample,
                                   uncertainty_slice)
from slam_common.worlds import render_ground_truth, wall_scene

ON_AXIS = (19, 19, 19)


@pytest.fixture
def wall_frame(small_camera, facing_x):
    return render_ground_truth(wall_scene(2.0), facing_x, small_camera)


@pytest.fixture
def wall_update(wall_frame, facing_x, wall_grid, wall_params):
    return compute_sdf_update(wall_frame.depth, wall_frame.color,
                              wall_frame.valid, facing_x,
                              wall_frame.intrinsics, wall_grid, wall_params)


def _row(update, grid, ijk):
    index = np.ravel_multi_index(ijk, grid.resolution)
    rows = np.flatnonzero(update.indices == index)
    return rows[0] if len(rows) else None


def _random_belief(rng, grid):
    shape = (CHANNELS,) + grid.resolution
    return VoxelMapBelief(grid, rng.normal(size=shape),
                          rng.uniform(0.1, 3.0, size=shape),
                          np.array([-0.001, 0.0, 0.0, 0.0]), PRIOR_STDDEV)


def _random_update(rng, grid, count):
    idx = rng.choice(grid.num_voxels, size=count, replace=False)
    return MapUpdate(idx, rng.normal(size=(count, CHANNELS)),
                     rng.uniform(0.0, 5.0, size=(count, CHANNELS)))


class TestGridSpec:
    def test_cube(self):
        grid = GridSpec.cube(14.0, 200)
        assert grid.voxel_size == pytest.approx(0.07)
        assert grid.origin == (-7.0, -7.0, -7.0)
        assert grid.num_voxels == 200 ** 3

    def test_rejects_non_cubic_voxels(self):
        with pytest.raises(InvalidConfig):
            GridSpec((0, 0, 0), (1.0, 2.0, 1.0), (10, 10, 10))

    def test_rejects_tiny_resolution(self):
        with pytest.raises(InvalidConfig):
            GridSpec((0, 0, 0), (1.0, 1.0, 1.0), (1, 1, 1))

    def test_voxel_centers_are_integer_coords(self, wall_grid):
        index = np.ravel_multi_index(ON_AXIS, wall_grid.resolution)
        center = wall_grid.voxel_centers(np.array([index]))[0]
        assert np.allclose(center, [2.0, 0.0, 0.0], atol=1e-9)
        assert np.allclose(wall_grid.to_grid_coords(center), ON_AXIS)


class TestTrilinearSample:
    def test_exact_at_voxel_centers(self, rng, wall_grid):
        belief = _random_belief(rng, wall_grid)
        index = np.ravel_multi_index((3, 7, 11), wall_grid.resolution)
        center = wall_grid.voxel_centers(np.array([index]))[0]
        assert np.allclose(trilinear_sample(belief, center),
                           belief.mean[:, 3, 7, 11], atol=1e-12)

    def test_midpoint_is_average(self, prior_map):
        prior_map.mean[0, 5, 5, 5], prior_map.mean[0, 6, 5, 5] = 1.0, 3.0
        grid = prior_map.spec
        centers = grid.voxel_centers(np.ravel_multi_index(
            ([5, 6], [5, 5], [5, 5]), grid.resolution))
        value = trilinear_sample(prior_map, centers.mean(0))
        assert value[0] == pytest.approx(2.0)

    def test_reproduces_affine_fields(self, rng, prior_map):
        grid = prior_map.spec
        ii, jj, kk = np.meshgrid(*[np.arange(n) for n in grid.resolution],
                                 indexing='ij')
        ijk = np.stack((ii, jj, kk), axis=-1)
        centers = np.array(grid.origin) + (ijk + 0.5) * grid.voxel_size
        coef = np.array([0.3, -1.2, 2.0])
        prior_map.mean[0] = centers @ coef + 0.7
        low, high = grid.interior_bounds()
        points = rng.uniform(low, high, size=(1000, 3))
        values = trilinear_sample(prior_map, points)[:, 0]
        assert np.allclose(values, points @ coef + 0.7, atol=1e-9)

    def test_out_of_bounds(self, prior_map):
        with pytest.raises(OutOfBounds):
            trilinear_sample(prior_map, [-5.0, 0.0, 0.0])

    def test_lenient_sampling_fills_with_prior(self, prior_map):
        value = sample_channels(prior_map, np.array([[-5.0, 0.0, 0.0]]))
        assert np.allclose(value[0], prior_map.prior_mean)


class TestComputeSdfUpdate:
    def test_voxel_on_the_wall(self, wall_update, wall_grid):
        row = _row(wall_update, wall_grid, ON_AXIS)
        assert wall_update.mean[row, 0] == pytest.approx(0.0, abs=1e-9)
        assert wall_update.precision[row, 0] == pytest.approx(1.0)

    def test_voxel_in_front_of_the_wall(self, wall_update, wall_grid,
                                        wall_params):
        row = _row(wall_update, wall_grid, (18, 19, 19))
        assert wall_update.mean[row, 0] == pytest.approx(
            -wall_params.truncation / 2, abs=1e-9)
        assert np.all(wall_update.precision[row, 1:] == 1.0)
        assert np.allclose(wall_update.mean[row, 1:], 0.6)

    def test_free_space_is_clamped_without_color(self, wall_update,
                                                 wall_grid, wall_params):
        row = _row(wall_update, wall_grid, (5, 19, 19))
        assert wall_update.mean[row, 0] == pytest.approx(
            -wall_params.truncation)
        assert np.all(wall_update.precision[row, 1:] == 0.0)

    def test_voxel_behind_the_band_is_not_selected(self, wall_update,
                                                   wall_grid):
        assert _row(wall_update, wall_grid, (23, 19, 19)) is None

    def test_parallel_matches_serial(self, wall_frame, facing_x, wall_grid,
                                     wall_params, wall_update):
        parallel = compute_sdf_update(wall_frame.depth, wall_frame.color,
                                      wall_frame.valid, facing_x,
                                      wall_frame.intrinsics, wall_grid,
                                      wall_params, workers=4)
        order_a = np.argsort(wall_update.indices)
        order_b = np.argsort(parallel.indices)
        assert np.array_equal(wall_update.indices[order_a],
                              parallel.indices[order_b])
        assert np.array_equal(wall_update.mean[order_a],
                              parallel.mean[order_b])

    def test_disjoint_frustum(self, wall_frame, wall_grid, wall_params):
        away = look_at((0.0, 0.0, 0.0), (-1.0, 0.0, 0.0))
        with pytest.raises(EmptyUpdate):
            compute_sdf_update(wall_frame.depth, wall_frame.color,
                               wall_frame.valid, away, wall_frame.intrinsics,
                               wall_grid, wall_params)

    def test_no_valid_depth(self, wall_frame, facing_x, wall_grid,
                            wall_params):
        with pytest.raises(EmptyUpdate):
            compute_sdf_update(wall_frame.depth, wall_frame.color,
                               np.zeros_like(wall_frame.valid), facing_x,
                               wall_frame.intrinsics, wall_grid, wall_params)


class TestApplyUpdate:
    def test_zero_precision_is_a_no_op(self, rng, wall_grid):
        belief = _random_belief(rng, wall_grid)
        update = _random_update(rng, wall_grid, 100)
        update = MapUpdate(update.indices, update.mean,
                           np.zeros_like(update.precision))
        out = apply_update(belief, update)
        assert np.array_equal(out.mean, belief.mean)
        assert np.array_equal(out.stddev, belief.stddev)

    def test_first_observation_dominates(self, prior_map):
        update = MapUpdate([42], [[0.5, 0.2, 0.3, 0.4]], [[1.0] * 4])
        out = apply_update(prior_map, update)
        assert np.allclose(out.mean.reshape(CHANNELS, -1)[:, 42],
                           [0.5, 0.2, 0.3, 0.4], atol=1e-5)
        assert np.allclose(out.stddev.reshape(CHANNELS, -1)[:, 42], 1.0,
                           atol=1e-5)

    def test_matches_running_weighted_average(self, rng):
        grid = GridSpec.cube(1.0, 10)
        belief = _random_belief(rng, grid)
        update = _random_update(rng, grid, grid.num_voxels)
        out = apply_update(belief, update)
        flat = update.indices
        weight = 1.0 / belief.stddev.reshape(CHANNELS, -1)[:, flat].T ** 2
        dist = belief.mean.reshape(CHANNELS, -1)[:, flat].T
        w, d = update.precision, update.mean
        expected = (weight * dist + w * d) / (weight + w)
        got_mean = out.mean.reshape(CHANNELS, -1)[:, flat].T
        got_weight = 1.0 / out.stddev.reshape(CHANNELS, -1)[:, flat].T ** 2
        touched = w > 0
        assert np.allclose(got_mean[touched], expected[touched], rtol=1e-12,
                           atol=1e-12)
        assert np.allclose(got_weight[touched], (weight + w)[touched],
                           rtol=1e-12)

    def test_float64_prior_matches_the_weighted_average(self, wall_grid):
        default = VoxelMapBelief.prior(wall_grid)
        assert default.mean.dtype == np.float32
        belief = VoxelMapBelief.prior(wall_grid, dtype=np.float64)
        update = MapUpdate([11], [[0.3, 0.2, 0.4, 0.6]], [[4.0] * 4])
        out = apply_update(belief, update)
        assert out.mean.dtype == out.stddev.dtype == np.float64
        w0 = 1.0 / PRIOR_STDDEV ** 2
        expected = (w0 * np.array([-0.001, 0.0, 0.0, 0.0])
                    + 4.0 * np.array([0.3, 0.2, 0.4, 0.6])) / (w0 + 4.0)
        assert np.allclose(out.mean.reshape(CHANNELS, -1)[:, 11], expected,
                           rtol=1e-12, atol=0.0)
        assert np.allclose(out.stddev.reshape(CHANNELS, -1)[:, 11],
                           (w0 + 4.0) ** -0.5, rtol=1e-12)

    def test_repeated_updates_accumulate(self, prior_map):
        update = MapUpdate([7], [[0.1, 0.5, 0.5, 0.5]], [[1.0] * 4])
        for _ in range(5):
            apply_update(prior_map, update, inplace=True)
        std = prior_map.stddev.reshape(CHANNELS, -1)[:, 7]
        assert np.allclose(1.0 / std ** 2, 5.0, rtol=1e-6)
        assert prior_map.mean.reshape(CHANNELS, -1)[0, 7] == pytest.approx(
            0.1, abs=1e-6)

    def test_untouched_voxels_are_bit_identical(self, rng, wall_grid):
        belief = _random_belief(rng, wall_grid)
        update = _random_update(rng, wall_grid, 50)
        out = apply_update(belief, update)
        mask = np.ones(wall_grid.num_voxels, dtype=bool)
        mask[update.indices] = False
        assert np.array_equal(out.mean.reshape(CHANNELS, -1)[:, mask],
                              belief.mean.reshape(CHANNELS, -1)[:, mask])

    def test_stddev_never_increases(self, rng, wall_grid):
        belief = _random_belief(rng, wall_grid)
        for _ in range(5):
            before = belief.stddev.copy()
            apply_update(belief, _random_update(rng, wall_grid, 500),
                         inplace=True)
            assert np.all(belief.stddev <= before)

    def test_index_out_of_range(self, prior_map):
        with pytest.raises(IndexOutOfRange):
            apply_update(prior_map, MapUpdate([prior_map.spec.num_voxels],
                                              [[0.0] * 4], [[1.0] * 4]))

    def test_duplicate_indices(self, prior_map):
        with pytest.raises(IndexOutOfRange):
            apply_update(prior_map, MapUpdate([3, 3], np.zeros((2, 4)),
                                              np.ones((2, 4))))


class TestMergeUpdates:
    def test_factorization(self, rng, wall_grid):
        belief = _random_belief(rng, wall_grid)
        first = _random_update(rng, wall_grid, 400)
        second = _random_update(rng, wall_grid, 400)
        sequential = apply_update(apply_update(belief, first), second)
        merged = apply_update(belief, merge_updates(first, second))
        assert np.allclose(sequential.mean, merged.mean, atol=1e-9)
        assert np.allclose(sequential.stddev, merged.stddev, atol=1e-9)


class TestUncertaintySlice:
    def test_fresh_map_is_constant(self, prior_map):
        plane = uncertainty_slice(prior_map, 'z', 19)
        assert plane.shape == (40, 40)
        assert np.all(plane == prior_map.prior_stddev)

    def test_fusion_reduces_in_frustum_only(self, prior_map, wall_update):
        fused = apply_update(prior_map, wall_update)
        plane = uncertainty_slice(fused, 'z', 19)
        assert plane[10, 19] < prior_map.prior_stddev
        assert plane[10, 0] == prior_map.prior_stddev
        # the region behind the wall stays occluded
        assert np.all(plane[24:, :] == prior_map.prior_stddev)

    def test_index_out_of_range(self, prior_map):
        with pytest.raises(IndexOutOfRange):
            uncertainty_slice(prior_map, 'x', 40)
        with pytest.raises(IndexOutOfRange):
            uncertainty_slice(prior_map, 'x', 0, channel=4)


class TestSignConvention:
    def test_occupancy_along_the_optical_axis(self, prior_map, wall_update):
        fused = apply_update(prior_map, wall_update)
        occ = lambda x: trilinear_sample(fused, [x, 0.0, 0.0])[0]  # noqa
        for x in np.arange(0.5, 1.75, 0.1):
            assert occ(x) < 0
        assert occ(2.0) == pytest.approx(0.0, abs=1e-5)
        assert occ(2.1) > 0


class TestSnapshot:
    def test_round_trip(self, rng, tmp_path, wall_grid):
        belief = _random_belief(rng, wall_grid)
        belief.mean = belief.mean.astype(np.float32)
        belief.stddev = belief.stddev.astype(np.float32)
        path = tmp_path / 'map.bin'
        save_map(belief, path)
        assert path.stat().st_size == HEADER_BYTES \
            + 2 * 4 * CHANNELS * wall_grid.num_voxels
        loaded = load_map(path)
        assert loaded.spec == wall_grid
        assert np.array_equal(loaded.mean, belief.mean)
        assert np.array_equal(loaded.stddev, belief.stddev)
        assert loaded.prior_stddev == belief.prior_stddev

    def test_payload_is_x_fastest(self, tmp_path):
        grid = GridSpec.cube(1.0, 2)
        belief = VoxelMapBelief.prior(grid)
        belief.mean[0, 1, 0, 0] = 5.0
        path = tmp_path / 'map.bin'
        save_map(belief, path)
        payload = np.frombuffer(path.read_bytes(), dtype='<f4',
                                offset=HEADER_BYTES)
        assert payload[1] == 5.0

    def test_truncated(self, tmp_path, prior_map):
        path = tmp_path / 'map.bin'
        save_map(prior_map, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(SnapshotFormatError):
            load_map(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'map.bin'
        path.write_bytes(b'NOPE' + bytes(HEADER_BYTES))
        with pytest.raises(SnapshotFormatError):
            load_map(path)
