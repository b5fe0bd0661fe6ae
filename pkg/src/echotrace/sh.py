"""Real spherical harmonics, ACN channel order, SN3D normalisation."""

import math

import numpy as np
from scipy.special import lpmv


def n_channels(order):
    return (order + 1) ** 2


def acn(l, m):
    return l * l + l + m


def real_sh(order, directions):
    """Evaluate all real SH up to ``order`` at unit ``directions`` (..., 3).

    Returns an array of shape (..., (order+1)**2). With SN3D the order-0 term
    is 1 and the first-order terms are (y, z, x).
    """
    d = np.asarray(directions, dtype=float)
    shape = d.shape[:-1]
    d = d.reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], np.clip(d[:, 2], -1.0, 1.0)
    phi = np.arctan2(y, x)
    out = np.empty((len(d), n_channels(order)))
    for l in range(order + 1):
        for m in range(0, l + 1):
            # scipy includes the Condon-Shortley phase; ambisonics drops it
            p = lpmv(m, l, z) * (-1.0) ** m
            norm = math.sqrt((1.0 if m == 0 else 2.0) * math.factorial(l - m) / math.factorial(l + m))
            if m == 0:
                out[:, acn(l, 0)] = norm * p
            else:
                out[:, acn(l, m)] = norm * p * np.cos(m * phi)
                out[:, acn(l, -m)] = norm * p * np.sin(m * phi)
    return out.reshape(shape + (n_channels(order),))


def rotate_directions_yaw(directions, yaw):
    """Rotate unit vectors anticlockwise about +z by ``yaw`` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    d = np.asarray(directions, dtype=float)
    return np.stack([c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1)
