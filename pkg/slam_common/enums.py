""" File with the useful enums for the project """

from enum import Enum, IntEnum
from functools import partial

import torch.optim as optim


class OutFiles(Enum):
    """ Enum representing the names of the files written to the output
        folder of a run
    """
    TRAJECTORY = 'trajectory.txt'
    GROUNDTRUTH = 'groundtruth.txt'
    COVARIANCES = 'covariances.csv'
    MAP = 'map.bin'
    TIMINGS = 'timings.csv'
    CONFIG = 'config.json'
    CURVE = 'chi2_curve.csv'
    WHITENED = 'whitened_residuals.csv'
    SUMMARY = 'summary.txt'

    def __str__(self):
        return self.value


class Stages(IntEnum):
    """ Enum representing the timed stages of a filter step """
    PROPAGATE = 0
    RENDER = 1
    TRACK = 2
    LAPLACE = 3
    MAP_UPDATE = 4

    def __str__(self):
        return self.name.lower()


class Axis(IntEnum):
    """ Enum representing the grid axes, used to pick slices """
    X = 0
    Y = 1
    Z = 2

    def __str__(self):
        return self.name.lower()

    @classmethod
    def _missing_(cls, value):
        return cls.__members__[str(value).upper()]


class SliceFormat(Enum):
    """ Enum with the export formats of map slices """
    CSV = 'csv'
    PNG = 'png'

    def __str__(self):
        return self.value

    @classmethod
    def _missing_(cls, value):
        return cls.__members__[str(value).upper()]


class Profiles(Enum):
    """ Enum with the dataset profiles. Each value holds the defaults of the
        hyperparameters that differ between data sets. Sizes are meters, the
        image size is (height, width). Truncation is in voxels.
    """
    EUROC = {'extent': 14.0, 'max_depth': 7.0, 'trunc_voxels': 2.0,
             'sigma_color': 0.1, 'sigma_geo': 0.02, 'image_size': (60, 80)}
    BLACKBIRD = {'extent': 25.0, 'max_depth': 20.0, 'trunc_voxels': 4.0,
                 'sigma_color': 0.02, 'sigma_geo': 0.2,
                 'image_size': (192, 256)}
    TUM = {'extent': 14.0, 'max_depth': 8.0, 'trunc_voxels': 2.0,
           'sigma_color': 0.1, 'sigma_geo': 0.02, 'image_size': (120, 160)}
    SYNTHETIC = {'extent': 14.0, 'max_depth': 8.0, 'trunc_voxels': 2.0,
                 'sigma_color': 0.1, 'sigma_geo': 0.02, 'image_size': (60, 80)}

    def __str__(self):
        return self.name.lower()

    @classmethod
    def _missing_(cls, value):
        return cls.__members__[str(value).upper()]


class Optimizers(Enum):
    """ Enum represeting the acceptable pose optimizers. Adam runs with its
        first moment disabled
    """
    ADAM = partial(lambda groups: optim.Adam(groups, betas=(0.0, 0.999)))
    SGD = partial(lambda groups: optim.SGD(groups, momentum=0.0))

    def __str__(self):
        return self.name.lower()

    @classmethod
    def _missing_(cls, value):
        return cls.__members__[str(value).upper()]
