""" The map belief: a dense voxel grid holding, per voxel, an independent
    Gaussian over (occupancy, R, G, B). Occupancy is the negative signed
    distance, so it is negative in observed free space, zero on surfaces and
    positive just behind them.
"""

import logging
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from pathlib import Path

import bitstring
import numpy as np
from scipy.ndimage import map_coordinates

from .beliefs import DiagonalGaussian, product_diagonal
from .enums import Axis
from .errors import (EmptyUpdate, IndexOutOfRange, InvalidConfig,
                     OutOfBounds, SnapshotFormatError)

logger = logging.getLogger(__name__)

CHANNELS = 4
PRIOR_OCCUPANCY = -0.001
PRIOR_STDDEV = 1e3
SLAB_VOXELS = 1 << 20

SNAPSHOT_MAGIC = b'PSDF'
SNAPSHOT_VERSION = 1
HEADER_FMT = ('bytes:4, uintle:32, floatle:64, floatle:64, floatle:64, '
              'floatle:64, floatle:64, floatle:64, uintle:32, uintle:32, '
              'uintle:32, floatle:64, floatle:64, floatle:64, floatle:64, '
              'floatle:64')
HEADER_BYTES = 4 + 4 + 6 * 8 + 3 * 4 + 5 * 8


@dataclass(frozen=True)
class GridSpec:
    """ Axis aligned grid: min corner (m), extent (m), voxels per axis """
    origin: tuple
    extent: tuple
    resolution: tuple

    def __post_init__(self):
        origin = tuple(float(x) for x in self.origin)
        extent = tuple(float(x) for x in self.extent)
        resolution = tuple(int(x) for x in self.resolution)
        if len(origin) != 3 or len(extent) != 3 or len(resolution) != 3:
            raise InvalidConfig('Grid vectors must have three entries')
        if min(extent) <= 0:
            raise InvalidConfig('Grid extent must be positive')
        if min(resolution) < 2:
            raise InvalidConfig('Grid resolution must be at least 2')
        sizes = np.array(extent) / np.array(resolution)
        if np.ptp(sizes) > 1e-9:
            raise InvalidConfig('Voxels must be cubic, got sizes {}'
                                .format(sizes))
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'extent', extent)
        object.__setattr__(self, 'resolution', resolution)

    @classmethod
    def cube(cls, extent, resolution, center=(0.0, 0.0, 0.0)):
        center = np.asarray(center, dtype=np.float64)
        origin = center - extent / 2.0
        return cls(tuple(origin), (extent,) * 3, (resolution,) * 3)

    @property
    def voxel_size(self):
        return self.extent[0] / self.resolution[0]

    @property
    def num_voxels(self):
        return int(np.prod(self.resolution))

    def to_grid_coords(self, points):
        """ Continuous voxel coordinates; voxel centers sit on integers """
        points = np.asarray(points, dtype=np.float64)
        return (points - np.array(self.origin)) / self.voxel_size - 0.5

    def voxel_centers(self, indices):
        ijk = np.stack(np.unravel_index(indices, self.resolution), axis=-1)
        return np.array(self.origin) + (ijk + 0.5) * self.voxel_size

    def inside(self, points):
        """ Mask of points inside the interior sampling domain, i.e. the box
            spanned by the outermost voxel centers
        """
        coords = self.to_grid_coords(points)
        upper = np.array(self.resolution) - 1
        return np.all((coords >= 0) & (coords <= upper), axis=-1)

    def interior_bounds(self):
        half = self.voxel_size / 2.0
        low = np.array(self.origin) + half
        return low, np.array(self.origin) + np.array(self.extent) - half


@dataclass(frozen=True)
class UpdateParams:
    """ Truncation distance (m) and the constant update scale """
    truncation: float
    sigma_update: float = 1.0

    def __post_init__(self):
        if self.truncation <= 0 or self.sigma_update <= 0:
            raise InvalidConfig('truncation and sigma_update must be > 0')

    @classmethod
    def for_grid(cls, spec, trunc_voxels=2.0, sigma_update=1.0):
        return cls(trunc_voxels * spec.voxel_size, sigma_update)

    @property
    def precision(self):
        return 1.0 / self.sigma_update ** 2


@dataclass
class VoxelMapBelief:
    """ Mean and stddev grids, both shaped (4, nx, ny, nz) """
    spec: GridSpec
    mean: np.ndarray
    stddev: np.ndarray
    prior_mean: np.ndarray
    prior_stddev: float

    @classmethod
    def prior(cls, spec, prior_occupancy=PRIOR_OCCUPANCY,
              prior_stddev=PRIOR_STDDEV, dtype=np.float32):
        """ Fresh map. float32 grids round every stored mean and stddev, so
            matching the running weighted average to 1e-12 needs float64.
        """
        shape = (CHANNELS,) + spec.resolution
        prior_mean = np.array([prior_occupancy, 0.0, 0.0, 0.0])
        mean = np.empty(shape, dtype=dtype)
        mean[:] = prior_mean.astype(dtype)[:, None, None, None]
        stddev = np.full(shape, prior_stddev, dtype=dtype)
        return cls(spec, mean, stddev, prior_mean, float(prior_stddev))

    def copy(self):
        return VoxelMapBelief(self.spec, self.mean.copy(), self.stddev.copy(),
                              self.prior_mean.copy(), self.prior_stddev)

    def mean_stddev(self, channel=0):
        return float(self.stddev[channel].mean(dtype=np.float64))


@dataclass(frozen=True)
class MapUpdate:
    """ Per voxel update factors; indices are linear indices into the grid """
    indices: np.ndarray
    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1, CHANNELS)
        precision = np.asarray(self.precision,
                               dtype=np.float64).reshape(-1, CHANNELS)
        if not (len(indices) == len(mean) == len(precision)):
            raise ValueError('MapUpdate arrays must have equal length')
        if np.any(precision < 0) or not np.all(np.isfinite(mean)):
            raise ValueError('MapUpdate needs finite means, precisions >= 0')
        object.__setattr__(self, 'indices', indices)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'precision', precision)

    def __len__(self):
        return len(self.indices)


def sample_channels(belief, points, channels=(0, 1, 2, 3), fill=None):
    """ Trilinear interpolation without bound errors. Points outside the
        interior domain get `fill` (default: the prior mean of each channel)
    """
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, 3)
    coords = belief.spec.to_grid_coords(flat).T
    inside = belief.spec.inside(flat)
    out = np.empty((len(channels), flat.shape[0]), dtype=np.float64)
    for row, channel in enumerate(channels):
        out[row] = map_coordinates(belief.mean[channel], coords, order=1,
                                   mode='nearest', output=np.float64)
        value = belief.prior_mean[channel] if fill is None else fill
        out[row, ~inside] = value
    return out.T.reshape(points.shape[:-1] + (len(channels),))


def trilinear_sample(belief, points):
    """ Interpolated (occupancy, r, g, b) at world points """
    points = np.asarray(points, dtype=np.float64)
    if not np.all(belief.spec.inside(points.reshape(-1, 3))):
        raise OutOfBounds('Query outside the interior sampling domain')
    return sample_channels(belief, points)


def _frustum_index_box(depth, valid, pose, intrinsics, spec, truncation):
    """ Index bounds of the voxels that may be selected by the frame """
    far = float(depth[valid].max()) + truncation
    h, w = depth.shape
    corners = np.array([[-0.5, -0.5], [w - 0.5, -0.5], [-0.5, h - 0.5],
                        [w - 0.5, h - 0.5]])
    rays = np.stack(((corners[:, 0] - intrinsics.cx) / intrinsics.fx,
                     (corners[:, 1] - intrinsics.cy) / intrinsics.fy,
                     np.ones(4)), axis=-1) * far
    pts = np.vstack((np.zeros(3), rays)) @ pose.rotation_matrix.T \
        + pose.translation
    coords = spec.to_grid_coords(pts)
    low = np.clip(np.floor(coords.min(0)).astype(int), 0, None)
    high = np.minimum(np.ceil(coords.max(0)).astype(int) + 1,
                      np.array(spec.resolution))
    return low, high


def _slab_update(args):
    (i0, i1, low, high, depth, color, valid, pose, intrinsics, spec,
     params) = args
    axes = [np.arange(i0, i1), np.arange(low[1], high[1]),
            np.arange(low[2], high[2])]
    ii, jj, kk = np.meshgrid(*axes, indexing='ij')
    ijk = np.stack((ii.ravel(), jj.ravel(), kk.ravel()), axis=-1)
    centers = np.array(spec.origin) + (ijk + 0.5) * spec.voxel_size
    p_cam = (centers - pose.translation) @ pose.rotation_matrix
    z = p_cam[:, 2]
    front = z > 1e-9
    ijk, p_cam, z = ijk[front], p_cam[front], z[front]
    col = np.floor(intrinsics.fx * p_cam[:, 0] / z + intrinsics.cx + 0.5)
    row = np.floor(intrinsics.fy * p_cam[:, 1] / z + intrinsics.cy + 0.5)
    h, w = depth.shape
    in_img = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    ijk, z = ijk[in_img], z[in_img]
    col, row = col[in_img].astype(int), row[in_img].astype(int)
    pix_valid = valid[row, col]
    ijk, z, col, row = ijk[pix_valid], z[pix_valid], col[pix_valid], \
        row[pix_valid]
    observed = depth[row, col]
    sdf = observed - z
    band = sdf >= -params.truncation
    ijk, sdf, col, row = ijk[band], sdf[band], col[band], row[band]

    n = len(sdf)
    mean = np.zeros((n, CHANNELS))
    precision = np.zeros((n, CHANNELS))
    mean[:, 0] = -np.clip(sdf, -params.truncation, params.truncation)
    precision[:, 0] = params.precision
    surface = sdf <= params.truncation
    mean[:, 1:] = color[row, col]
    precision[surface, 1:] = params.precision
    indices = np.ravel_multi_index(ijk.T, spec.resolution) if n else \
        np.zeros(0, dtype=np.int64)
    return indices, mean, precision


def compute_sdf_update(depth, color, valid, pose, intrinsics, spec, params,
                       workers=1):
    """ Projective, truncated SDF update of one RGB-D frame taken at `pose`.

        A voxel is selected when its center projects onto a valid pixel and
        its camera depth z satisfies 0 < z <= D + truncation, D being the
        observed depth. Its occupancy update is -clamp(D - z) with the
        update precision; colors are only updated inside the band
        |D - z| <= truncation.
    """
    valid = np.asarray(valid, dtype=bool) & (np.asarray(depth) > 0)
    if not valid.any():
        raise EmptyUpdate('Frame has no valid depth')
    low, high = _frustum_index_box(depth, valid, pose, intrinsics, spec,
                                   params.truncation)
    if np.any(high <= low):
        raise EmptyUpdate('Camera frustum does not intersect the grid')

    plane = int((high[1] - low[1]) * (high[2] - low[2]))
    step = max(1, SLAB_VOXELS // max(plane, 1))
    color = np.zeros(depth.shape + (3,)) if color is None else color
    jobs = [(i0, min(i0 + step, high[0]), low, high, depth, color, valid,
             pose, intrinsics, spec, params)
            for i0 in range(low[0], high[0], step)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPool(workers) as pool:
            parts = pool.map(_slab_update, jobs)
    else:
        parts = list(map(_slab_update, jobs))
    indices = np.concatenate([p[0] for p in parts])
    if not len(indices):
        raise EmptyUpdate('No voxel falls inside the truncation band')
    update = MapUpdate(indices, np.concatenate([p[1] for p in parts]),
                       np.concatenate([p[2] for p in parts]))
    logger.debug('Map update selects %d voxels', len(update))
    return update


def apply_update(belief, update, inplace=False):
    """ Per voxel and channel Gaussian product of the belief and the update.
        Channels with zero update precision and untouched voxels keep their
        exact values.
    """
    idx = update.indices
    if len(idx) and (idx.min() < 0 or idx.max() >= belief.spec.num_voxels):
        raise IndexOutOfRange('Update index outside the grid')
    if len(np.unique(idx)) != len(idx):
        raise IndexOutOfRange('Update indices must be unique')
    out = belief if inplace else belief.copy()
    if not len(idx):
        return out
    mean_flat = out.mean.reshape(CHANNELS, -1)
    std_flat = out.stddev.reshape(CHANNELS, -1)
    old_mean = mean_flat[:, idx].T.astype(np.float64)
    old_std = std_flat[:, idx].T.astype(np.float64)
    post = product_diagonal(DiagonalGaussian(old_mean, old_std),
                            DiagonalGaussian.from_precision(update.mean,
                                                            update.precision))
    touched = update.precision > 0
    new_mean = np.where(touched, post.mean, old_mean)
    new_std = np.where(touched, np.minimum(post.stddev, old_std), old_std)
    mean_flat[:, idx] = new_mean.T.astype(out.mean.dtype)
    std_flat[:, idx] = np.minimum(new_std.T.astype(out.stddev.dtype),
                                  std_flat[:, idx])
    return out


def merge_updates(first, second):
    """ Single update equivalent to applying `first` then `second` """
    indices = np.union1d(first.indices, second.indices)
    prec = np.zeros((len(indices), CHANNELS))
    weighted = np.zeros((len(indices), CHANNELS))
    for upd in (first, second):
        pos = np.searchsorted(indices, upd.indices)
        prec[pos] += upd.precision
        weighted[pos] += upd.precision * upd.mean
    mean = np.divide(weighted, prec, out=np.zeros_like(weighted),
                     where=prec > 0)
    return MapUpdate(indices, mean, prec)


def uncertainty_slice(belief, axis, index, channel=0):
    """ Stddev plane orthogonal to `axis` at voxel `index` """
    axis = Axis(axis)
    if not 0 <= index < belief.spec.resolution[axis]:
        raise IndexOutOfRange('Slice index {} out of range'.format(index))
    if not 0 <= channel < CHANNELS:
        raise IndexOutOfRange('Channel {} out of range'.format(channel))
    return np.take(belief.stddev[channel], index, axis=int(axis)).copy()


def save_map(belief, path):
    """ Little endian snapshot: packed header, then the mean and stddev
        grids as float32, channel major and x fastest
    """
    spec = belief.spec
    header = bitstring.pack(HEADER_FMT, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
                            *spec.origin, *spec.extent, *spec.resolution,
                            *belief.prior_mean, belief.prior_stddev)
    with open(str(path), 'wb') as out:
        out.write(header.tobytes())
        for grid in (belief.mean, belief.stddev):
            out.write(np.ascontiguousarray(
                grid.transpose(0, 3, 2, 1)).astype('<f4').tobytes())


def load_map(path):
    """ Read a snapshot written by save_map """
    data = Path(path).read_bytes()
    if len(data) < HEADER_BYTES:
        raise SnapshotFormatError('{} is too short'.format(path))
    fields = bitstring.ConstBitStream(data[:HEADER_BYTES]).readlist(HEADER_FMT)
    if fields[0] != SNAPSHOT_MAGIC or fields[1] != SNAPSHOT_VERSION:
        raise SnapshotFormatError('{} is not a map snapshot'.format(path))
    spec = GridSpec(fields[2:5], fields[5:8], fields[8:11])
    count = CHANNELS * spec.num_voxels
    if len(data) != HEADER_BYTES + 2 * 4 * count:
        raise SnapshotFormatError('{} has a truncated payload'.format(path))
    nx, ny, nz = spec.resolution
    grids = []
    for start in (HEADER_BYTES, HEADER_BYTES + 4 * count):
        raw = np.frombuffer(data, dtype='<f4', count=count, offset=start)
        grids.append(np.ascontiguousarray(
            raw.reshape(CHANNELS, nz, ny, nx).transpose(0, 3, 2, 1),
            dtype=np.float32))
    return VoxelMapBelief(spec, grids[0], grids[1], np.array(fields[11:15]),
                          float(fields[15]))
