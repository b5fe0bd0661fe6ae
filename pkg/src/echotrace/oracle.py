"""Analytic references for validation: image sources in a shoebox, Sabine and Eyring.

Only specular reflection with frequency-independent absorption is modelled;
comparisons against the tracer run with scattering, diffraction, transmission
and air absorption switched off.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

SABINE_CONSTANT = 0.161
MAX_ORDER = 10

# wall order: x=0, x=Lx, y=0, y=Ly, z=0, z=Lz
WALLS = ("x0", "x1", "y0", "y1", "z0", "z1")


@dataclass(frozen=True)
class Shoebox:
    size: tuple
    source: tuple
    receiver: tuple
    absorption: tuple = (0.2,) * 6

    def __post_init__(self):
        size = tuple(float(s) for s in self.size)
        if len(size) != 3 or min(size) <= 0:
            raise InvalidInputError("shoebox dimensions must be three positive lengths")
        alpha = self.absorption
        if np.isscalar(alpha):
            alpha = (float(alpha),) * 6
        alpha = tuple(float(a) for a in alpha)
        if len(alpha) != 6 or min(alpha) < 0 or max(alpha) > 1:
            raise InvalidInputError("absorption must be one value or six values in [0, 1]")
        for name in ("source", "receiver"):
            p = tuple(float(x) for x in getattr(self, name))
            if len(p) != 3 or not all(0 < p[i] < size[i] for i in range(3)):
                raise InvalidInputError(f"{name} must lie strictly inside the box")
            object.__setattr__(self, name, p)
        if math.dist(self.source, self.receiver) < 1e-6:
            raise InvalidInputError("source and receiver must not coincide")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "absorption", alpha)

    @property
    def volume(self):
        lx, ly, lz = self.size
        return lx * ly * lz

    def surfaces(self):
        """(area, alpha) per wall in WALLS order."""
        lx, ly, lz = self.size
        areas = (ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly)
        return list(zip(areas, self.absorption))


class Arrival(NamedTuple):
    delay: float
    energy: float
    image: tuple
    order: int


def image_source_arrays(box, max_order, speed_of_sound=343.0, max_delay=None):
    """Vectorised image-source enumeration.

    Returns (delays, energies, images, orders) sorted by delay then order.
    Image coordinates per axis are (1 - 2p) x_s + 2 q L with p in {0, 1};
    the path crosses the wall at 0 |q - p| times and the wall at L |q| times.
    """
    L = np.array(box.size)
    src = np.array(box.source)
    rcv = np.array(box.receiver)
    extent = [max_order // 2 + 1] * 3
    if max_delay is not None:
        reach = max_delay * speed_of_sound
        extent = [min(e, int(math.ceil(reach / (2.0 * l))) + 1) for e, l in zip(extent, L)]
    refl = 1.0 - np.array(box.absorption)
    with np.errstate(divide="ignore"):
        logr = np.log(refl)
    q = np.stack(np.meshgrid(*[np.arange(-e, e + 1) for e in extent], indexing="ij"), axis=-1).reshape(-1, 3)
    parts = []
    for p in itertools.product((0, 1), repeat=3):
        p = np.array(p)
        order = np.abs(2 * q - p).sum(axis=1)
        sel = order <= max_order
        qq = q[sel]
        img = (1 - 2 * p) * src + 2 * qq * L
        r = np.linalg.norm(img - rcv, axis=1)
        delay = r / speed_of_sound
        if max_delay is not None:
            near = delay <= max_delay
            qq, img, r, delay = qq[near], img[near], r[near], delay[near]
        # hits on the wall at 0 and at L for each axis
        n_low = np.abs(qq - p)
        n_high = np.abs(qq)
        logg = np.zeros(len(qq))
        for axis in range(3):
            logg += np.where(n_low[:, axis] > 0, n_low[:, axis] * logr[2 * axis], 0.0)
            logg += np.where(n_high[:, axis] > 0, n_high[:, axis] * logr[2 * axis + 1], 0.0)
        energy = np.exp(logg) / (4.0 * np.pi * r * r)
        parts.append((delay, energy, img, np.abs(2 * qq - p).sum(axis=1)))
    delay, energy, img, order = (np.concatenate([x[i] for x in parts]) for i in range(4))
    srt = np.lexsort((order, delay))
    return delay[srt], energy[srt], img[srt], order[srt]


def image_source_arrivals(box, max_order, speed_of_sound=343.0, max_delay=None, allow_high_order=False):
    """All image sources up to ``max_order`` reflections, sorted by delay.

    Energy of each arrival is prod(1 - alpha_wall) / (4 pi r^2) over the walls
    the specular path crosses. ``max_order`` is limited to 10 unless
    ``allow_high_order`` is set (used for late-energy references, where
    ``max_delay`` bounds the enumeration).
    """
    if max_order < 0:
        raise InvalidInputError("max_order must be non-negative")
    if max_order > MAX_ORDER and not allow_high_order:
        raise InvalidInputError(f"max_order above {MAX_ORDER} needs allow_high_order=True")
    delay, energy, img, order = image_source_arrays(box, max_order, speed_of_sound, max_delay)
    return [Arrival(float(d), float(e), tuple(float(x) for x in i), int(o))
            for d, e, i, o in zip(delay, energy, img, order)]


def arrival_arrays(arrivals):
    """(delays, energies, orders) arrays from a list of Arrival."""
    if not arrivals:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
    return (np.array([a.delay for a in arrivals]), np.array([a.energy for a in arrivals]),
            np.array([a.order for a in arrivals]))


def oracle_drr(box, speed_of_sound=343.0, direct_window=2.5e-3, pre_window=0.5e-3,
               max_delay=2.0, max_order=None):
    """DRR (dB) of the specular image-source response.

    Energy arriving within [t_direct - pre_window, t_direct + direct_window] counts
    as direct, everything later up to ``max_delay`` as reverberant.
    """
    if max_order is None:
        # every image within max_delay has at most this many reflections
        max_order = int(sum(math.ceil(max_delay * speed_of_sound / l) + 1 for l in box.size))
    d, e, _, _ = image_source_arrays(box, max_order, speed_of_sound, max_delay=max_delay)
    t0 = d[0]
    direct = e[(d >= t0 - pre_window) & (d <= t0 + direct_window)].sum()
    late = e[d > t0 + direct_window].sum()
    return 10.0 * math.log10(direct / late)


def _check_surfaces(surfaces):
    s = np.asarray(surfaces, dtype=float).reshape(-1, 2)
    if np.any(s[:, 0] < 0) or np.any(s[:, 1] < 0) or np.any(s[:, 1] > 1):
        raise InvalidInputError("surfaces must be (area >= 0, alpha in [0, 1]) pairs")
    return s[:, 0], s[:, 1]


def sabine_rt60(volume, surfaces):
    """T = 0.161 V / sum(S_i alpha_i)."""
    area, alpha = _check_surfaces(surfaces)
    total = float(np.sum(area * alpha))
    if not total > 0:
        raise InvalidInputError("total absorption must be positive")
    return SABINE_CONSTANT * volume / total


def eyring_rt60(volume, surfaces):
    """T = 0.161 V / (-S ln(1 - mean alpha))."""
    area, alpha = _check_surfaces(surfaces)
    s = float(area.sum())
    mean = float(np.sum(area * alpha)) / s
    if mean >= 1.0:
        raise InvalidInputError("mean absorption must be below 1")
    if mean <= 0.0:
        raise InvalidInputError("total absorption must be positive")
    return SABINE_CONSTANT * volume / (-s * math.log1p(-mean))
