""" File that contains host helpers used by the entry point: memory and
    thread sizing
"""

import numpy as np
import psutil

from slam_common.errors import InvalidConfig

# mean and stddev grids plus the per-update working copies
GRID_COPIES = 2.5


def estimate_grid_bytes(resolution, dtype='float32', channels=4):
    """ Bytes taken by the mean and stddev grids of a map """
    voxels = int(np.prod(resolution))
    return int(GRID_COPIES * 2 * channels * voxels
               * np.dtype(dtype).itemsize)


def check_grid_memory(resolution, dtype='float32', mem_percentage=0.5):
    """ Raise InvalidConfig when the map would not fit in the given share of
        the host memory
    """
    needed = estimate_grid_bytes(resolution, dtype)
    limit = psutil.virtual_memory().total * mem_percentage
    if needed > limit:
        raise InvalidConfig(
            'A {} grid needs {:.1f} GiB, more than {:.0%} of the host memory'
            .format('x'.join(map(str, resolution)), needed / 2 ** 30,
                    mem_percentage))
    return needed


def estimate_workers(requested=0):
    """ Requested thread count, or the physical core count when 0 """
    if requested and requested > 0:
        return int(requested)
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
