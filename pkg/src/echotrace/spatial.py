"""Pressure synthesis and spatial encodings (mono, ambisonics, binaural, speakers, arrays).

The diffuse part of a histogram becomes band-limited noise shaped by the
square-root energy envelope; early reflections and the direct sound are added
as impulses whose per-band amplitudes are combined through the same
filterbank. Ambisonics use ACN/SN3D.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .errors import InvalidInputError
from .scene import fibonacci_sphere
from .sh import n_channels, real_sh, rotate_directions_yaw

HEAD_RADIUS = 0.0875
SPEED_OF_SOUND = 343.0
ALPHA_MIN = 0.1
THETA_MIN = math.radians(150.0)
VIRTUAL_SPEAKERS = 50
LFE_CUTOFF = 120.0
PAD_SECONDS = 0.05

# azimuths (degrees, anticlockwise from front); None marks the LFE channel
SPEAKER_LAYOUTS = {
    "stereo": (30.0, -30.0),
    "quad": (45.0, -45.0, 135.0, -135.0),
    "surround_5_1": (30.0, -30.0, 0.0, None, 110.0, -110.0),
    "surround_7_1": (30.0, -30.0, 0.0, None, 90.0, -90.0, 150.0, -150.0),
}
MIC_TYPES = ("mono", "stereo", "binaural", "quad", "surround_5_1", "surround_7_1", "ambisonics", "custom")


@dataclass
class ImpulseResponse:
    """Pressure IR, shape (channels, samples).

    ``parts`` keeps the components used to build the IR (diffuse, early,
    direct signals and the direct arrival direction) so later encodings can
    treat the direct sound separately.
    """

    sampling_rate: int
    channels: np.ndarray
    layout: str = "mono"
    order: Optional[int] = None
    parts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim == 1:
            ch = ch[None, :]
        if ch.ndim != 2:
            raise InvalidInputError("channels must be a (C, L) array")
        if not np.all(np.isfinite(ch)):
            raise InvalidInputError("IR samples must be finite")
        self.channels = ch
        if self.layout == "ambisonics" and ch.shape[0] != n_channels(self.order):
            raise InvalidInputError("ambisonic channel count does not match the order")
        if self.layout == "binaural" and ch.shape[0] != 2:
            raise InvalidInputError("binaural IRs have two channels")

    @property
    def n_channels(self):
        return self.channels.shape[0]

    @property
    def n_samples(self):
        return self.channels.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sampling_rate

    def mono(self):
        return self.channels[0]


# ---------------------------------------------------------------- filterbank

def band_masks(bands, n_fft, sampling_rate):
    """Amplitude-complementary zero-phase band masks H_k on the rfft grid.

    Adjacent bands cross over with cos^2 / sin^2 in log-frequency between
    their centres, so sum_k H_k = 1 at every frequency. The lowest band
    extends to DC and the highest to Nyquist.
    """
    f = sfft.rfftfreq(n_fft, 1.0 / sampling_rate)
    c = np.asarray(bands.centers, dtype=float)
    m = len(c)
    H = np.zeros((m, len(f)))
    if m == 1:
        H[0] = 1.0
        return H
    logf = np.log(np.maximum(f, 1e-12))
    logc = np.log(c)
    H[0, f <= c[0]] = 1.0
    H[-1, f >= c[-1]] = 1.0
    for k in range(m - 1):
        sel = (f > c[k]) & (f < c[k + 1])
        x = (logf[sel] - logc[k]) / (logc[k + 1] - logc[k])
        H[k, sel] = np.cos(0.5 * np.pi * x) ** 2
        H[k + 1, sel] = np.sin(0.5 * np.pi * x) ** 2
    for k in range(m):
        H[k, f == c[k]] = 1.0
    return H


def band_weights(bands, sampling_rate, n_fft=1 << 16):
    """Fraction of the (linear) spectrum covered by each band: w_k = mean H_k."""
    H = band_masks(bands, n_fft, sampling_rate)
    # rfft grid: DC and Nyquist carry half weight
    wts = np.full(H.shape[1], 2.0)
    wts[0] = 1.0
    if n_fft % 2 == 0:
        wts[-1] = 1.0
    return (H * wts).sum(axis=1) / wts.sum()


def broadband_energy(energy, bands, sampling_rate):
    """Broadband energy sum_k w_k E_k of per-band energies (last axis)."""
    return np.asarray(energy, dtype=float) @ band_weights(bands, sampling_rate)


def _fft_size(n, fs):
    return sfft.next_fast_len(n + 2 * int(PAD_SECONDS * fs))


def impulse_spectrum(delays, amplitudes, masks, n_fft, sampling_rate, offset):
    """Spectrum of band-shaped impulses: sum_i (sum_k a_ik H_k) e^{-j w (t_i + offset)}."""
    f = sfft.rfftfreq(n_fft, 1.0 / sampling_rate)
    out = np.zeros(len(f), dtype=complex)
    for t, a in zip(delays, amplitudes):
        out += (a @ masks) * np.exp(-2j * np.pi * f * (t + offset / sampling_rate))
    return out


def _orthogonalize(v, basis):
    """Remove from ``v`` its components along the orthonormal vectors in ``basis``."""
    for q in basis:
        v = v - np.dot(q, v) * q
    return v


def synthesize_pressure(hist, bands=None, rng_seed=0, indirect_gain=1.0):
    """Mono pressure IR from an energy histogram.

    Each band's noise has its energy set exactly to w_k times the band's
    histogram energy; impulses carry per-band amplitudes sqrt(E_k).
    ``indirect_gain`` scales the reflected (diffuse and early) pressure.
    The band noises are made orthogonal to each other and to the impulses
    (Gram-Schmidt, then rescaled), so the IR energy is the sum of the parts'
    energies without random cross terms.
    """
    bands = bands or hist.bands
    fs = hist.sampling_rate
    n = hist.n_bins * hist.bin_samples
    m = bands.count
    if hist.energy.shape[1] != m:
        raise InvalidInputError("band count of the histogram does not match")
    n_fft = _fft_size(n, fs)
    pad = int(PAD_SECONDS * fs)
    H = band_masks(bands, n_fft, fs)
    w = band_weights(bands, fs)
    rng = np.random.default_rng(rng_seed)
    early = np.zeros(n)
    if hist.early_reflections:
        d = [r.delay for r in hist.early_reflections]
        a = [np.sqrt(r.energy) for r in hist.early_reflections]
        early = sfft.irfft(impulse_spectrum(d, a, H, n_fft, fs, pad), n_fft)[pad:pad + n]
    direct = np.zeros(n)
    direct_dir = None
    if hist.direct is not None and np.any(hist.direct.energy > 0):
        direct = sfft.irfft(impulse_spectrum([hist.direct.delay], [np.sqrt(hist.direct.energy)], H, n_fft, fs, pad),
                            n_fft)[pad:pad + n]
        direct_dir = np.asarray(hist.direct.direction, dtype=float)
    diffuse = np.zeros(n)
    if np.any(hist.energy > 0):
        basis = []
        for v in (direct, early):
            v = _orthogonalize(v, basis)
            norm = math.sqrt(float(np.dot(v, v)))
            if norm > 0:
                basis.append(v / norm)
        env = np.sqrt(np.repeat(hist.energy / hist.bin_samples, hist.bin_samples, axis=0))  # (n, m)
        noise = rng.standard_normal((m, n_fft))
        spec = sfft.rfft(noise, axis=1) * np.sqrt(H)
        filtered = sfft.irfft(spec, n_fft, axis=1)[:, pad:pad + n]
        for k in range(m):
            p = _orthogonalize(filtered[k] * env[:, k], basis)
            target = w[k] * hist.energy[:, k].sum()
            have = float(np.dot(p, p))
            if have > 0:
                q = p / math.sqrt(have)
                basis.append(q)
                diffuse += q * math.sqrt(target)
    diffuse = diffuse * indirect_gain
    early = early * indirect_gain
    mono = (diffuse + early) + direct
    parts = {"diffuse": diffuse, "early": early, "direct": direct, "direct_direction": direct_dir,
             "indirect_gain": float(indirect_gain)}
    return ImpulseResponse(fs, mono, "mono", None, parts)


# ---------------------------------------------------------------- ambisonics

def _bin_coefficients(hist, order):
    """Per-bin SH coefficients normalised so the order-0 term is 1."""
    sh = hist.sh[:, :n_channels(order)]
    out = np.zeros_like(sh)
    out[:, 0] = 1.0
    nz = sh[:, 0] > 0
    out[nz, 1:] = sh[nz, 1:] / sh[nz, 0:1]
    return out


def to_ambisonic(hist, pressure_ir, order=None):
    """Ambisonic IR (ACN/SN3D) from a histogram and its mono pressure IR.

    The diffuse part takes the normalised SH coefficients of its histogram
    bin; early reflections and the direct sound are encoded from their own
    directions. The order-0 channel equals the mono IR bit for bit.
    """
    order = hist.sh_order if order is None else order
    if order < 0 or order > hist.sh_order:
        raise InvalidInputError(f"order {order} exceeds the histogram's SH order {hist.sh_order}")
    parts = pressure_ir.parts
    if not parts:
        raise InvalidInputError("pressure IR lacks its synthesis components")
    n = pressure_ir.n_samples
    nc = n_channels(order)
    coef = np.repeat(_bin_coefficients(hist, order), hist.bin_samples, axis=0)[:n]
    diffuse = parts["diffuse"][None, :] * coef.T
    early = _encode_events(hist, pressure_ir, order)
    indirect = diffuse + early
    direct = np.zeros((nc, n))
    if parts["direct_direction"] is not None:
        direct = parts["direct"][None, :] * real_sh(order, parts["direct_direction"])[:, None]
    ch = indirect + direct
    # exact order-0 identity (all order-0 gains are 1)
    ch[0] = (parts["diffuse"] + parts["early"]) + parts["direct"]
    new_parts = dict(parts)
    new_parts["indirect_ambisonic"] = indirect
    return ImpulseResponse(pressure_ir.sampling_rate, ch, "ambisonics", order, new_parts)


def _encode_events(hist, pressure_ir, order):
    nc = n_channels(order)
    n = pressure_ir.n_samples
    if not hist.early_reflections:
        return np.zeros((nc, n))
    fs = pressure_ir.sampling_rate
    n_fft = _fft_size(n, fs)
    pad = int(PAD_SECONDS * fs)
    H = band_masks(hist.bands, n_fft, fs)
    f = sfft.rfftfreq(n_fft, 1.0 / fs)
    spec = np.zeros((nc, len(f)), dtype=complex)
    early = pressure_ir.parts["early"]
    for r in hist.early_reflections:
        s = (np.sqrt(r.energy) @ H) * np.exp(-2j * np.pi * f * (r.delay + pad / fs))
        spec += real_sh(order, r.direction)[:, None] * s[None, :]
    out = sfft.irfft(spec, n_fft, axis=1)[:, pad:pad + n] * pressure_ir.parts.get("indirect_gain", 1.0)
    out[0] = early
    return out


# ---------------------------------------------------------------- binaural

@dataclass(frozen=True)
class HeadModel:
    radius: float = HEAD_RADIUS
    alpha_min: float = ALPHA_MIN
    theta_min: float = THETA_MIN
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError("head radius must be positive")
        if not 0 < self.alpha_min <= 1:
            raise InvalidInputError("alpha_min must lie in (0, 1]")

    def ear_delay(self, directions, ear):
        """Woodworth path delay (s) to the ear on side ``ear`` (+1 left, -1 right), offset to be >= 0."""
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        gamma = np.arccos(np.clip(d[:, 1] * ear, -1.0, 1.0))  # angle to the ear axis
        a_c = self.radius / self.speed_of_sound
        tau = np.where(gamma < 0.5 * np.pi, -a_c * np.cos(gamma), a_c * (gamma - 0.5 * np.pi))
        return tau + a_c

    def shadow(self, directions, ear, freqs):
        """First-order head-shadow response per direction and frequency."""
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        gamma = np.arccos(np.clip(d[:, 1] * ear, -1.0, 1.0))
        alpha = (1.0 + 0.5 * self.alpha_min) + (1.0 - 0.5 * self.alpha_min) * np.cos(gamma / self.theta_min * np.pi)
        w = 2.0 * np.pi * np.asarray(freqs)[None, :]
        w0 = self.speed_of_sound / self.radius
        return (1.0 + 1j * alpha[:, None] * w / (2.0 * w0)) / (1.0 + 1j * w / (2.0 * w0))

    def itd(self, azimuth):
        """Woodworth ITD a (theta + sin theta) / c for lateral angle theta in [0, pi/2]."""
        theta = abs(float(azimuth))
        if theta > 0.5 * np.pi:
            theta = np.pi - theta
        return self.radius / self.speed_of_sound * (theta + math.sin(theta))


def virtual_speakers(n=VIRTUAL_SPEAKERS):
    """Left/right symmetric speaker set: n Fibonacci points plus their mirrors across y = 0."""
    d = fibonacci_sphere(n)
    return np.vstack([d, d * np.array([1.0, -1.0, 1.0])])


def _ear_transfer(head, directions, ear, freqs):
    tau = head.ear_delay(directions, ear)
    return head.shadow(directions, ear, freqs) * np.exp(-2j * np.pi * freqs[None, :] * tau[:, None])


def to_binaural(ambisonic_ir, head=None, orientation=0.0):
    """Parametric binaural decode of an ambisonic IR.

    The reflected sound is decoded to a symmetric set of virtual speakers
    (pseudo-inverse decoder) and each speaker is rendered with Woodworth
    delays and a head-shadow filter. The direct sound is rendered from its
    exact direction. ``orientation`` is an extra head yaw (radians).
    """
    head = head or HeadModel()
    ir = ambisonic_ir
    if ir.layout != "ambisonics" or ir.order < 1:
        raise InvalidInputError("binaural decoding needs an ambisonic IR of order >= 1")
    fs = ir.sampling_rate
    n = ir.n_samples
    parts = ir.parts
    if "indirect_ambisonic" in parts:
        amb = parts["indirect_ambisonic"]
        direct = parts["direct"]
        ddir = parts["direct_direction"]
    else:
        amb = ir.channels
        direct = None
        ddir = None
    spk = virtual_speakers()
    # speakers are fixed to the head; turning the head rotates them in the listener frame
    spk_world = rotate_directions_yaw(spk, orientation)
    Y = real_sh(ir.order, spk_world)  # (S, C)
    D = np.linalg.pinv(Y.T)  # (S, C): speaker gains from SH channels
    n_fft = sfft.next_fast_len(n + int(0.01 * fs))
    freqs = sfft.rfftfreq(n_fft, 1.0 / fs)
    A = sfft.rfft(amb, n_fft, axis=1)
    out = np.zeros((2, n))
    for i, ear in enumerate((1, -1)):
        T = _ear_transfer(head, spk, ear, freqs)  # head-relative speaker directions
        F = D.T @ T  # (C, F)
        spec = (A * F).sum(axis=0)
        if direct is not None and ddir is not None:
            rel = rotate_directions_yaw(ddir, -orientation)
            spec = spec + sfft.rfft(direct, n_fft) * _ear_transfer(head, rel, ear, freqs)[0]
        out[i] = sfft.irfft(spec, n_fft)[:n]
    return ImpulseResponse(fs, out, "binaural", None, dict(parts))


# ---------------------------------------------------------------- speaker layouts

def decode_speakers(ambisonic_ir, layout):
    """Cardioid decode 0.5 (W + X cos(az) + Y sin(az)) per speaker; LFE is W low-passed at 120 Hz."""
    if layout not in SPEAKER_LAYOUTS:
        raise InvalidInputError(f"unknown speaker layout {layout!r}")
    ir = ambisonic_ir
    if ir.layout != "ambisonics" or ir.order < 1:
        raise InvalidInputError("speaker decoding needs an ambisonic IR of order >= 1")
    W, Yc, X = ir.channels[0], ir.channels[1], ir.channels[3]
    out = []
    for az in SPEAKER_LAYOUTS[layout]:
        if az is None:
            sos = signal.butter(4, LFE_CUTOFF, fs=ir.sampling_rate, output="sos")
            out.append(signal.sosfilt(sos, W))
        else:
            a = math.radians(az)
            out.append(0.5 * (W + X * math.cos(a) + Yc * math.sin(a)))
    return ImpulseResponse(ir.sampling_rate, np.array(out), layout, None, dict(ir.parts))


# ---------------------------------------------------------------- microphones and arrays

@dataclass(frozen=True)
class MicrophoneConfig:
    kind: str = "mono"
    order: int = 1
    capsules: tuple = ()
    head: HeadModel = field(default_factory=HeadModel)

    def __post_init__(self):
        if self.kind not in MIC_TYPES:
            raise InvalidInputError(f"unknown microphone type {self.kind!r}; expected one of {MIC_TYPES}")
        if self.kind == "custom":
            caps = np.asarray(self.capsules, dtype=float).reshape(-1, 3) if len(self.capsules) else np.zeros((0, 3))
            if len(caps) < 1:
                raise InvalidInputError("a custom array needs at least one capsule")
            if np.any(np.linalg.norm(caps, axis=1) > 1.0):
                raise InvalidInputError("capsule offsets must lie within 1 m of the listener")
            object.__setattr__(self, "capsules", tuple(tuple(float(x) for x in c) for c in caps))
        if self.order < 0:
            raise InvalidInputError("ambisonic order must be non-negative")

    @property
    def n_channels(self):
        if self.kind == "mono":
            return 1
        if self.kind == "binaural":
            return 2
        if self.kind == "ambisonics":
            return n_channels(self.order)
        if self.kind == "custom":
            return len(self.capsules)
        return len(SPEAKER_LAYOUTS[self.kind])


def spatialize(hist, config, rng_seed=0, indirect_gain=1.0):
    """IR in the configured format from one histogram (custom arrays need render_array)."""
    mono = synthesize_pressure(hist, rng_seed=rng_seed, indirect_gain=indirect_gain)
    if config.kind == "mono":
        return mono
    if config.kind == "custom":
        raise InvalidInputError("custom arrays need one simulation per capsule; use render_array")
    order = config.order if config.kind == "ambisonics" else max(1, min(hist.sh_order, 1))
    if order > hist.sh_order:
        raise InvalidInputError(f"order {order} exceeds the histogram's SH order {hist.sh_order}")
    amb = to_ambisonic(hist, mono, order)
    if config.kind == "ambisonics":
        return amb
    if config.kind == "binaural":
        return to_binaural(amb, config.head)
    return decode_speakers(amb, config.kind)


def render_array(scene, source, listener, config, params, orientation=0.0, materials=None, cache=None):
    """One mono simulation per capsule, stacked in capsule order.

    Capsule offsets are in the listener frame and rotate with the listener
    yaw. Source paths are traced once and shared by all capsules.
    """
    from .propagation import PathCache, simulate

    if config.kind != "custom":
        raise InvalidInputError("render_array needs a custom MicrophoneConfig")
    cache = cache or PathCache()
    listener = np.asarray(listener, dtype=float)
    chans = []
    parts = []
    for off in config.capsules:
        pos = listener + rotate_directions_yaw(np.asarray(off), orientation)
        if not scene.contains(pos):
            warnings.warn(f"capsule at {tuple(pos)} lies outside the scene bounds", RuntimeWarning, stacklevel=2)
        hist = simulate(scene, source, pos, params, materials, orientation, cache=cache)
        ir = synthesize_pressure(hist, rng_seed=params.rng_seed)
        chans.append(ir.channels[0])
        parts.append(ir.parts)
    return ImpulseResponse(params.sampling_rate, np.array(chans), "array", None, {"capsules": parts})
