import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from slam_common.geometry import CameraIntrinsics, Pose, Quat, look_at
from slam_common.voxel_map import GridSpec, UpdateParams, VoxelMapBelief


def random_pose(rng, scale=1.0):
    rot = Rotation.random(random_state=int(rng.integers(2 ** 31)))
    return Pose(rng.normal(scale=scale, size=3), Quat.from_scipy(rot))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_camera():
    """ Odd-sized image whose principal point sits on a pixel center """
    return CameraIntrinsics(fx=30.0, fy=30.0, cx=16.0, cy=12.0, width=33,
                            height=25, max_depth=8.0)


@pytest.fixture
def wall_grid():
    """ 4 m cube of 0.1 m voxels with a voxel center at (2, 0, 0) """
    return GridSpec.cube(4.0, 40, center=(2.05, 0.05, 0.05))


@pytest.fixture
def wall_params(wall_grid):
    return UpdateParams.for_grid(wall_grid, trunc_voxels=2.0)


@pytest.fixture
def facing_x():
    """ Camera at the origin looking down +x """
    return look_at((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))


@pytest.fixture
def prior_map(wall_grid):
    return VoxelMapBelief.prior(wall_grid, dtype=np.float64)
