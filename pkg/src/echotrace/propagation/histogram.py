"""Energy-time histogram with per-bin spherical-harmonic directivity."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..sh import n_channels, real_sh


@dataclass
class EnergyHistogram:
    """Banded energy per time bin plus discrete events.

    ``energy`` has shape (n_bins, n_bands). ``sh`` has shape
    (n_bins, (order+1)**2) and holds the SN3D-weighted sum of broadband
    (band-summed) energy over arrival directions, so ``sh[:, 0]`` equals
    ``energy.sum(axis=1)``. Directions are in the listener frame.
    """

    sampling_rate: int
    bands: object
    n_bins: int
    sh_order: int = 1
    bin_samples: int = 1
    energy: np.ndarray = None
    sh: np.ndarray = None
    early_reflections: list = field(default_factory=list)
    direct: Optional[object] = None
    dropped: int = 0

    def __post_init__(self):
        if self.n_bins < 0 or self.sh_order < 0 or self.bin_samples < 1:
            raise InvalidInputError("invalid histogram shape")
        if self.energy is None:
            self.energy = np.zeros((self.n_bins, self.bands.count))
        if self.sh is None:
            self.sh = np.zeros((self.n_bins, n_channels(self.sh_order)))

    @property
    def bin_duration(self):
        return self.bin_samples / self.sampling_rate

    @property
    def n_bands(self):
        return self.bands.count

    def times(self):
        """Start time of each bin (s)."""
        return np.arange(self.n_bins) * self.bin_duration

    def total_energy(self):
        """Per-band energy of the diffuse part, early reflections and direct sound."""
        e = self.energy.sum(axis=0)
        for r in self.early_reflections:
            e = e + r.energy
        if self.direct is not None:
            e = e + self.direct.energy
        return e

    def is_empty(self):
        return not np.any(self.energy) and not self.early_reflections and (
            self.direct is None or not np.any(self.direct.energy))

    def copy(self):
        return EnergyHistogram(self.sampling_rate, self.bands, self.n_bins, self.sh_order, self.bin_samples,
                               self.energy.copy(), self.sh.copy(), list(self.early_reflections),
                               self.direct, self.dropped)


def bin_index(delay, sampling_rate, bin_samples=1):
    return np.floor(np.asarray(delay, dtype=float) * sampling_rate / bin_samples).astype(np.int64)


def accumulate(hist, delay, energy, direction, sh_order=None):
    """Add arrivals to ``hist`` in place and return the number dropped.

    Arrivals are sorted canonically (bin, delay, energies, direction) before
    summation, so any permutation of the inputs gives bitwise-identical bins.
    Arrivals at or beyond the histogram length are dropped and counted.
    """
    order = hist.sh_order if sh_order is None else sh_order
    if order > hist.sh_order:
        raise InvalidInputError("sh_order exceeds the histogram's order")
    delay = np.atleast_1d(np.asarray(delay, dtype=float))
    energy = np.asarray(energy, dtype=float)
    energy = energy.reshape(len(delay), -1) if len(delay) else energy.reshape(0, hist.n_bands)
    direction = np.asarray(direction, dtype=float).reshape(len(delay), 3)
    if energy.shape[1] != hist.n_bands:
        raise InvalidInputError("energy must have one value per band")
    if np.any(energy < 0) or not np.all(np.isfinite(energy)):
        raise InvalidInputError("energies must be finite and non-negative")
    if np.any(delay < 0):
        raise InvalidInputError("delays must be non-negative")
    b = bin_index(delay, hist.sampling_rate, hist.bin_samples)
    keep = b < hist.n_bins
    dropped = int(np.count_nonzero(~keep))
    b, delay, energy, direction = b[keep], delay[keep], energy[keep], direction[keep]
    if len(b):
        keys = [direction[:, i] for i in range(2, -1, -1)] + [energy[:, i] for i in range(energy.shape[1] - 1, -1, -1)]
        srt = np.lexsort(keys + [delay, b])
        b, energy, direction = b[srt], energy[srt], direction[srt]
        for band in range(hist.n_bands):
            hist.energy[:, band] += np.bincount(b, energy[:, band], minlength=hist.n_bins)
        broadband = energy.sum(axis=1)
        y = real_sh(order, direction) * broadband[:, None]
        for ch in range(y.shape[1]):
            hist.sh[:, ch] += np.bincount(b, y[:, ch], minlength=hist.n_bins)
    hist.dropped += dropped
    return dropped
