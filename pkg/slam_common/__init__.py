""" Probabilistic RGB-D SLAM: Gaussian voxel map and state filters """
