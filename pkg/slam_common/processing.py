""" This file has operations for image, trajectory and report I/O """

import logging
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image
from scipy import ndimage
from skimage import img_as_float, img_as_ubyte
from skimage.measure import block_reduce

from .enums import SliceFormat
from .errors import SnapshotFormatError
from .geometry import Pose

logger = logging.getLogger(__name__)

DEPTH_SCALE = 5000.0
CROSS = ndimage.generate_binary_structure(2, 1)
TRIANGLE_COLS = ['c{}{}'.format(i, j) for i in range(6) for j in range(i, 6)]
MEAN_COLS = ['tx', 'ty', 'tz', 'rx', 'ry', 'rz', 'vx', 'vy', 'vz', 'wx', 'wy',
             'wz']
TUM_COLS = ['timestamp', 'tx', 'ty', 'tz', 'qx', 'qy', 'qz', 'qw']


class ImgProc:
    """ Static class that has methods to make basic operations on images """

    @staticmethod
    def load_color(path):
        """ RGB image as float in [0, 1] """
        with Image.open(str(path)) as img:
            data = np.array(img.convert('RGB'))
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            return img_as_float(data).astype(np.float64)

    @staticmethod
    def load_depth(path, scale=DEPTH_SCALE):
        """ 16-bit depth PNG in meters; 0 marks missing depth """
        with Image.open(str(path)) as img:
            data = np.array(img).astype(np.float64)
        return data / scale

    @staticmethod
    def save_color(color, path):
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            Image.fromarray(img_as_ubyte(np.clip(color, 0, 1))).save(str(path))

    @staticmethod
    def save_depth(depth, valid, path, scale=DEPTH_SCALE):
        """ 16-bit PNG with `scale` units per meter, 0 where invalid """
        units = np.where(valid, np.rint(depth * scale), 0)
        units = np.clip(units, 0, np.iinfo(np.uint16).max).astype(np.uint16)
        Image.fromarray(units).save(str(path))

    @staticmethod
    def save_rgbd(frame, color_path, depth_path):
        ImgProc.save_color(frame.color, color_path)
        ImgProc.save_depth(frame.depth, frame.valid, depth_path)

    @staticmethod
    def downsample_color(color, factor):
        if factor == 1:
            return color
        return block_reduce(color, (factor, factor, 1), np.mean)

    @staticmethod
    def downsample_depth(depth, factor):
        """ Box filter over the valid (non zero) pixels of each block """
        if factor == 1:
            return depth
        valid = (depth > 0).astype(np.float64)
        total = block_reduce(depth * valid, (factor, factor), np.sum)
        count = block_reduce(valid, (factor, factor), np.sum)
        return np.divide(total, count, out=np.zeros_like(total),
                         where=count > 0)

    @staticmethod
    def smooth_depth_mask(depth, valid, threshold):
        """ False where the depth range over the 4-neighbourhood of a pixel
            (valid neighbours only) exceeds `threshold`
        """
        high = ndimage.maximum_filter(np.where(valid, depth, -np.inf),
                                      footprint=CROSS, mode='nearest')
        low = ndimage.minimum_filter(np.where(valid, depth, np.inf),
                                     footprint=CROSS, mode='nearest')
        return valid & (high - low <= threshold)

    @staticmethod
    def save_slice(plane, path, fmt, prior_stddev):
        """ Stddev plane as CSV or as a 16-bit PNG where prior_stddev maps
            to 65535
        """
        fmt = SliceFormat(fmt)
        if fmt == SliceFormat.CSV:
            pd.DataFrame(plane).to_csv(str(path), float_format='%.6g')
            return
        top = np.iinfo(np.uint16).max
        scaled = np.clip(np.rint(plane / prior_stddev * top), 0, top)
        Image.fromarray(scaled.astype(np.uint16)).save(str(path))


class TrajIO:
    """ Static class reading and writing trajectories and filter reports """

    @staticmethod
    def write_tum(path, timestamps, poses):
        """ 'timestamp tx ty tz qx qy qz qw' per line """
        rows = [[t, *p.translation, p.rotation[1], p.rotation[2],
                 p.rotation[3], p.rotation[0]]
                for t, p in zip(timestamps, poses)]
        df = pd.DataFrame(rows, columns=TUM_COLS)
        df.to_csv(str(path), sep=' ', header=False, index=False,
                  float_format='%.9f')

    @staticmethod
    def read_tum(path):
        """ Timestamps and poses of a TUM trajectory file """
        df = pd.read_csv(str(path), sep=r'\s+', comment='#', header=None)
        if df.shape[1] != len(TUM_COLS):
            raise SnapshotFormatError('{} is not a TUM trajectory'
                                      .format(path))
        values = df.to_numpy(dtype=np.float64)
        poses = [Pose(row[1:4], [row[7], row[4], row[5], row[6]])
                 for row in values]
        return values[:, 0], poses

    @staticmethod
    def write_covariances(path, timestamps, beliefs):
        """ Per frame: 21 upper-triangle pose covariance entries and the
            12-dim state mean
        """
        upper = np.triu_indices(6)
        rows = [np.concatenate(([t], b.pose_covariance[upper],
                                b.mean_vector()))
                for t, b in zip(timestamps, beliefs)]
        df = pd.DataFrame(rows, columns=['timestamp'] + TRIANGLE_COLS
                          + MEAN_COLS)
        df.to_csv(str(path), index=False, float_format='%.9g')

    @staticmethod
    def read_covariances(path):
        """ Timestamps, (N, 6, 6) pose covariances and (N, 12) means """
        df = pd.read_csv(str(path))
        upper = np.triu_indices(6)
        tri = df[TRIANGLE_COLS].to_numpy(dtype=np.float64)
        covs = np.zeros((len(df), 6, 6))
        covs[:, upper[0], upper[1]] = tri
        covs[:, upper[1], upper[0]] = tri
        return (df['timestamp'].to_numpy(dtype=np.float64), covs,
                df[MEAN_COLS].to_numpy(dtype=np.float64))

    @staticmethod
    def write_table(df, path, with_mean=False):
        """ CSV report, optionally closed by a 'mean' row """
        if with_mean and len(df):
            mean_df = pd.DataFrame(df.mean(axis=0).values.reshape(1, -1),
                                   columns=df.columns,
                                   index=pd.Index(['mean']))
            df = pd.concat((df, mean_df))
        df.to_csv(str(path), float_format='%.6f')
        logger.info('Wrote %s', Path(path).name)
