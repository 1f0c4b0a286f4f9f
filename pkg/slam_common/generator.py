""" File containing the indexing of TUM RGB-D style sequence folders """

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import MissingIndexFile, NoAssociations
from .geometry import Pose

logger = logging.getLogger(__name__)

MAX_DIFFERENCE = 0.02


def read_index(path, columns):
    """ Whitespace separated index file with '#' comments """
    return pd.read_csv(str(path), sep=r'\s+', comment='#', header=None,
                       names=columns)


def associate(first, second, max_difference=MAX_DIFFERENCE, offset=0.0):
    """ Greedy one to one matching of two timestamp arrays: the closest
        remaining pair is matched first, pairs further apart than
        `max_difference` never are. Returns sorted (i, j) index pairs.
    """
    first = np.asarray(first, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64) + offset
    order = np.argsort(second)
    sorted_second = second[order]
    candidates = []
    for i, stamp in enumerate(first):
        lo = np.searchsorted(sorted_second, stamp - max_difference, 'left')
        hi = np.searchsorted(sorted_second, stamp + max_difference, 'right')
        for k in range(lo, hi):
            diff = abs(stamp - sorted_second[k])
            if diff < max_difference:
                candidates.append((diff, i, int(order[k])))
    candidates.sort()
    used_first, used_second, matches = set(), set(), []
    for _, i, j in candidates:
        if i not in used_first and j not in used_second:
            used_first.add(i)
            used_second.add(j)
            matches.append((i, j))
    return sorted(matches)


class TumSequence:
    """ Class representing a TUM RGB-D sequence folder: rgb.txt, depth.txt
        and an optional groundtruth.txt
    """

    def __init__(self, path, max_difference=MAX_DIFFERENCE):
        self.path = Path(path)
        if not self.path.is_dir():
            raise MissingIndexFile('{} is not a directory'.format(path))
        self.max_difference = max_difference
        self.rgb = self._index('rgb.txt', ['timestamp', 'file'])
        self.depth = self._index('depth.txt', ['timestamp', 'file'])
        gt_path = self.path / 'groundtruth.txt'
        self.groundtruth = read_index(gt_path, [
            'timestamp', 'tx', 'ty', 'tz', 'qx', 'qy', 'qz', 'qw']) \
            if gt_path.exists() else None
        self.pairs = self._do_association()

    def _index(self, name, columns):
        path = self.path / name
        if not path.exists():
            raise MissingIndexFile('{} is missing'.format(path))
        return read_index(path, columns)

    def _do_association(self):
        matches = associate(self.rgb['timestamp'], self.depth['timestamp'],
                            self.max_difference)
        if not matches:
            raise NoAssociations('No rgb/depth pair within {} s in {}'
                                 .format(self.max_difference, self.path))
        skipped = len(self.rgb) - len(matches)
        if skipped:
            logger.warning('%d rgb frames without depth partner skipped',
                           skipped)
        return matches

    def __len__(self):
        return len(self.pairs)

    def groundtruth_poses(self, stamps):
        """ Ground-truth pose associated to each stamp, None if there is none
        """
        out = [None] * len(stamps)
        if self.groundtruth is None:
            return out
        values = self.groundtruth.to_numpy(dtype=np.float64)
        for i, j in associate(stamps, values[:, 0], self.max_difference):
            row = values[j]
            out[i] = Pose(row[1:4], [row[7], row[4], row[5], row[6]])
        return out

    def entries(self):
        """ (timestamp, rgb path, depth path) of every associated pair """
        for i, j in self.pairs:
            yield (float(self.rgb['timestamp'][i]),
                   self.path / self.rgb['file'][i],
                   self.path / self.depth['file'][j])
