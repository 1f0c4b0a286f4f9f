""" File containing custom torch operations used by the pose objective """

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64


def to_tensor(array):
    return torch.as_tensor(np.ascontiguousarray(array), dtype=DTYPE)


def skew(vec):
    """ Cross product matrix of a 3-vector, differentiable """
    zero = vec.new_zeros(())
    return torch.stack((
        torch.stack((zero, -vec[2], vec[1])),
        torch.stack((vec[2], zero, -vec[0])),
        torch.stack((-vec[1], vec[0], zero))))


def first_order_rotation(omega):
    """ I + [omega]x. Exact value and gradient of Exp(omega) at omega = 0 """
    return torch.eye(3, dtype=omega.dtype) + skew(omega)


def bilinear_sample(image, u, v):
    """ Bilinear lookup of a (C, H, W) image at pixel coordinates u (column)
        and v (row). Returns (N, C); the result is differentiable w.r.t. u, v.
        Coordinates outside the image read zeros.
    """
    _, height, width = image.shape
    grid = torch.stack((2.0 * u / (width - 1) - 1.0,
                        2.0 * v / (height - 1) - 1.0), dim=-1)
    out = F.grid_sample(image[None], grid[None, None], mode='bilinear',
                        padding_mode='zeros', align_corners=True)
    return out[0, :, 0].T
