"""Convolution, trajectory rendering with crossfades, resampling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal

from .errors import InvalidInputError

MIN_RATE = 8000
MAX_RATE = 96000
FILTER_HALF_LENGTH = 64
KAISER_BETA = 10.0


@dataclass
class AudioClip:
    sampling_rate: int
    samples: np.ndarray  # (C, N)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise InvalidInputError("samples must be a (C, N) array")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("audio samples must be finite")
        if not self.sampling_rate > 0:
            raise InvalidInputError("sampling_rate must be positive")
        self.samples = x
        self.sampling_rate = int(self.sampling_rate)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sampling_rate


@dataclass
class Trajectory:
    """Listener poses at uniform steps; headings in radians, anticlockwise from +x."""

    times: np.ndarray
    positions: np.ndarray
    headings: np.ndarray
    step: Optional[float] = None
    crossfade: float = 0.05

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        h = np.asarray(self.headings, dtype=float).reshape(-1)
        if len(t) < 1 or len(p) != len(t) or len(h) != len(t):
            raise InvalidInputError("times, positions and headings must have equal non-zero length")
        if len(t) > 1:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise InvalidInputError("trajectory times must be strictly increasing")
            if np.max(np.abs(dt - dt[0])) > 1e-6 * max(1.0, dt[0]):
                raise InvalidInputError("trajectory steps must be uniform")
            step = float(dt[0]) if self.step is None else float(self.step)
            if abs(step - dt[0]) > 1e-6:
                raise InvalidInputError("step does not match the trajectory times")
        else:
            if self.step is None:
                raise InvalidInputError("a single-pose trajectory needs an explicit step")
            step = float(self.step)
        if not step > 0:
            raise InvalidInputError("step must be positive")
        if not 0 <= self.crossfade < step:
            raise InvalidInputError("crossfade window must be shorter than the step")
        self.times, self.positions, self.headings, self.step = t, p, h, step

    def __len__(self):
        return len(self.times)

    @classmethod
    def static(cls, position, heading, n_steps, step=0.15, crossfade=0.05, start=0.0):
        t = start + step * np.arange(n_steps)
        return cls(t, np.tile(np.asarray(position, dtype=float), (n_steps, 1)), np.full(n_steps, heading),
                   step, crossfade)

    @classmethod
    def linear(cls, start, velocity, heading, n_steps, step=0.15, crossfade=0.05):
        t = step * np.arange(n_steps)
        p = np.asarray(start, dtype=float) + t[:, None] * np.asarray(velocity, dtype=float)
        return cls(t, p, np.full(n_steps, heading), step, crossfade)


def _channels(ir):
    return np.atleast_2d(np.asarray(getattr(ir, "channels", ir), dtype=float))


def convolve(source, ir):
    """Full linear convolution of a mono clip with every IR channel (length N + L - 1)."""
    if source.n_channels != 1:
        raise InvalidInputError("convolution expects a mono source")
    rate = getattr(ir, "sampling_rate", source.sampling_rate)
    if rate != source.sampling_rate:
        raise InvalidInputError(f"sampling rates differ: source {source.sampling_rate} Hz, IR {rate} Hz")
    h = _channels(ir)
    x = source.samples[0]
    out = np.array([signal.fftconvolve(x, hc) for hc in h])
    return AudioClip(source.sampling_rate, out)


def crossfade_weights(n):
    """Linear fade-in weights w (0 -> 1) and the matching fade-out 1 - w."""
    if n <= 0:
        return np.zeros(0), np.zeros(0)
    w = np.linspace(0.0, 1.0, n) if n > 1 else np.ones(1)
    return w, 1.0 - w


def _history(x, start, stop):
    """x[start:stop] with zeros outside the signal."""
    out = np.zeros(stop - start)
    lo, hi = max(start, 0), min(stop, len(x))
    if hi > lo:
        out[lo - start:hi - start] = x[lo:hi]
    return out


def _render_window(x, h, start, n):
    """Output samples [start, start + n) of x * h from the 'valid' part of a segment convolution."""
    seg = _history(x, start - len(h) + 1, start + n)
    return signal.fftconvolve(seg, h, mode="valid")


def stitch(source, irs, starts, step_samples, crossfade_samples):
    """Blockwise rendering with linear crossfades between consecutive IRs.

    Block i covers output samples [starts[i], starts[i] + step_samples) and is
    rendered with irs[i]; its first ``crossfade_samples`` samples fade from
    the previous IR's rendering of the same span to the new one.
    """
    if source.n_channels != 1:
        raise InvalidInputError("trajectory rendering expects a mono source")
    x = source.samples[0]
    hs = [_channels(ir) for ir in irs]
    c = hs[0].shape[0]
    if any(h.shape[0] != c for h in hs):
        raise InvalidInputError("all IRs must have the same channel count")
    starts = [int(s) for s in starts]
    total = starts[-1] + step_samples
    out = np.zeros((c, total))
    w_in, w_out = crossfade_weights(crossfade_samples)
    short = False
    for i, (s, h) in enumerate(zip(starts, hs)):
        if s - h.shape[1] + 1 < 0:
            short = True
        for ch in range(c):
            block = _render_window(x, h[ch], s, step_samples)
            if i > 0 and crossfade_samples > 0:
                prev = _render_window(x, hs[i - 1][ch], s, crossfade_samples)
                block[:crossfade_samples] = w_in * block[:crossfade_samples] + w_out * prev
            out[ch, s:s + step_samples] = block
    if short:
        warnings.warn("IR longer than the available source history; history zero-padded", RuntimeWarning,
                      stacklevel=2)
    return AudioClip(source.sampling_rate, out)


def render_trajectory(source, scene, source_position, trajectory, params, config=None, materials=None,
                      irs=None):
    """Received audio along a listener trajectory.

    Step i renders [t_i, t_i + step) with the IR at pose i by convolving the
    source segment [t_i - L_IR, t_i + step) and keeping the valid part, then
    crossfades its first ``trajectory.crossfade`` seconds with the previous
    IR. ``irs`` may supply precomputed IRs (one per pose).
    """
    fs = source.sampling_rate
    if fs != params.sampling_rate:
        raise InvalidInputError("source sampling rate differs from params.sampling_rate; resample first")
    n = int(round(trajectory.step * fs))
    k = int(round(trajectory.crossfade * fs))
    starts = np.round(np.asarray(trajectory.times) * fs).astype(np.int64)
    if np.any(starts < 0):
        raise InvalidInputError("trajectory times must be non-negative")
    if irs is None:
        irs = trajectory_irs(scene, source_position, trajectory, params, config, materials)
    if len(irs) != len(trajectory):
        raise InvalidInputError("one IR per trajectory pose is required")
    return stitch(source, irs, starts, n, k)


def trajectory_irs(scene, source_position, trajectory, params, config=None, materials=None):
    """IRs at every pose; source paths are shared through a path cache."""
    from .propagation import PathCache, simulate
    from .spatial import MicrophoneConfig, render_array, spatialize

    config = config or MicrophoneConfig("mono")
    cache = PathCache()
    out = []
    for pos, yaw in zip(trajectory.positions, trajectory.headings):
        if config.kind == "custom":
            out.append(render_array(scene, source_position, pos, config, params, yaw, materials, cache))
        else:
            hist = simulate(scene, source_position, pos, params, materials, yaw, cache=cache)
            out.append(spatialize(hist, config, rng_seed=params.rng_seed))
    return out


def resample(clip, target_rate):
    """Polyphase band-limited resampling between rates in [8, 96] kHz."""
    target_rate = int(target_rate)
    for r in (clip.sampling_rate, target_rate):
        if not MIN_RATE <= r <= MAX_RATE:
            raise InvalidInputError(f"sampling rate {r} Hz outside [{MIN_RATE}, {MAX_RATE}] Hz")
    if target_rate == clip.sampling_rate:
        return AudioClip(clip.sampling_rate, clip.samples.copy())
    g = math.gcd(clip.sampling_rate, target_rate)
    up, down = target_rate // g, clip.sampling_rate // g
    # longer Kaiser design than scipy's default, for > 60 dB round trips
    m = max(up, down)
    h = signal.firwin(2 * FILTER_HALF_LENGTH * m + 1, 1.0 / m, window=("kaiser", KAISER_BETA))
    y = signal.resample_poly(clip.samples, up, down, axis=1, window=h, padtype="line")
    return AudioClip(target_rate, y)
