"""Validation suites run by ``echotrace validate``.

Each suite returns a list of :class:`Check`; a suite passes when every
check passes.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import metrics
from .audio import AudioClip, convolve, crossfade_weights, stitch
from .errors import InvalidInputError
from .materials import AcousticMaterial
from .oracle import Shoebox, image_source_arrays, oracle_drr
from .params import SimulationParams
from .scene import box_mesh, build_scene

SUITES = ("shoebox", "decay", "continuity")
BOX = (4.0, 3.0, 2.5)
SOURCE = (1.0, 1.0, 1.2)
LISTENER = (2.7, 2.1, 1.5)
ALPHA = 0.2
SQRT_4PI = math.sqrt(4.0 * math.pi)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    target: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.6g} ({self.target})"


def _shoebox_params(**kw):
    base = dict(diffraction_enabled=False, transmission_enabled=False, air_enabled=False, max_ir_seconds=1.0)
    base.update(kw)
    return SimulationParams(**base)


def shoebox_suite(rays=1_000_000, threads=1, bias=1.0, seed=0):
    """Arrival times, first-order energies and cluster count against image sources; DRR against the oracle.

    ``bias`` multiplies the synthesized reflected pressure (a value of
    sqrt(4 pi) reproduces the classic normalisation bug and must fail).
    """
    from .propagation import simulate
    from .spatial import synthesize_pressure

    checks = []
    box = Shoebox(BOX, SOURCE, LISTENER, (ALPHA,) * 6)
    specular = build_scene(box_mesh(BOX), AcousticMaterial.uniform("specular", ALPHA, 0.0))
    p = _shoebox_params(num_source_rays=rays, num_listener_rays=1000, max_source_depth=2, max_listener_depth=2,
                        band_count=1, max_ir_seconds=0.5, thread_count=threads, rng_seed=seed)
    t0 = time.perf_counter()
    h = simulate(specular, SOURCE, LISTENER, p)
    elapsed = time.perf_counter() - t0
    d, e, _, o = image_source_arrays(box, 1)
    bin_s = h.bin_duration
    checks.append(Check("direct delay error (bins)", abs(h.direct.delay - d[0]) / bin_s <= 1.0,
                        abs(h.direct.delay - d[0]) / bin_s, "<= 1 bin"))
    first = sorted((r for r in h.early_reflections if r.bounces == 1), key=lambda r: r.delay)
    checks.append(Check("first-order cluster count", len(first) == 6, len(first), "== 6"))
    if len(first) == 6:
        dt = max(abs(r.delay - x) for r, x in zip(first, d[o == 1])) / bin_s
        de = max(abs(r.energy.sum() - x) / x for r, x in zip(first, e[o == 1]))
        checks.append(Check("first-order delay error (bins)", dt <= 1.0, dt, "<= 1 bin"))
        checks.append(Check("first-order energy error", de <= 0.05, de, "<= 5 %"))
    checks.append(Check("specular run time (s)", elapsed < 60.0, elapsed, "< 60 s"))

    diffuse = build_scene(box_mesh(BOX), AcousticMaterial.uniform("wall", ALPHA, 0.5))
    p = _shoebox_params(max_source_depth=256, thread_count=threads, rng_seed=seed)
    h = simulate(diffuse, SOURCE, LISTENER, p)
    ir = synthesize_pressure(h, rng_seed=seed, indirect_gain=bias)
    got = metrics.drr(ir.channels[0], ir.sampling_rate).db
    ref = oracle_drr(box, max_delay=p.max_ir_seconds)
    checks.append(Check("DRR error vs image sources (dB)", abs(got - ref) <= 1.5, got - ref, "|x| <= 1.5 dB"))
    return checks


def exponential_ir(tau, seconds=1.5, sampling_rate=44100, seed=0):
    """Gaussian noise under an e^(-t/tau) pressure envelope."""
    t = np.arange(int(seconds * sampling_rate)) / sampling_rate
    return np.random.default_rng(seed).standard_normal(len(t)) * np.exp(-t / tau)


def decay_suite(seed=0):
    """RT60, EDC slope and DRR on constructed IRs."""
    from .propagation import EnergyHistogram
    from .spatial import synthesize_pressure

    fs = 44100
    tau = 0.1
    bands = SimulationParams().bands
    hist = EnergyHistogram(fs, bands, int(1.5 * fs))
    t = hist.times()
    hist.energy[:] = (np.exp(-2.0 * t / tau) / bands.count)[:, None]
    ir = synthesize_pressure(hist, rng_seed=seed).channels[0]
    fit = metrics.rt60(ir, fs)
    checks = [Check("RT60 of synthesized exponential IR (s)", fit.valid and abs(fit.rt60 / 0.6908 - 1) <= 0.02,
                    fit.rt60, "0.6908 +- 2 %")]
    slope_ref = -10.0 * math.log10(math.e) * 2.0 / tau
    checks.append(Check("EDC slope (dB/s)", abs(fit.slope / slope_ref - 1) <= 0.02, fit.slope,
                        f"{slope_ref:.2f} +- 2 %"))
    checks.append(Check("EDC linearity R^2", fit.r2 > 0.99, fit.r2, "> 0.99"))
    x = np.zeros(fs)
    x[1000] = 1.0
    x[5000:5100] = math.sqrt(0.1 / 100)
    d = metrics.drr(x, fs).db
    checks.append(Check("constructed 10 dB DRR (dB)", abs(d - 10.0) <= 0.1, d, "10.0 +- 0.1"))
    return checks


def _walk_irs(n):
    return [np.r_[np.zeros(10 + 5 * i), [1.0 / (1.0 + 0.3 * i)]] for i in range(n)]


def continuity_suite(seed=0):
    """Static-trajectory identity, crossfade weights, step-boundary bound and ITD."""
    fs = 44100
    rng = np.random.default_rng(seed)
    src = AudioClip(fs, rng.standard_normal(fs))
    h = rng.standard_normal(2048) * np.exp(-np.arange(2048) / 300.0)
    step = int(0.15 * fs)
    n = len(src.samples[0]) // step
    starts = step * np.arange(n)
    with warnings.catch_warnings():
        # the first step has no source history; zero padding is the intended behaviour here
        warnings.simplefilter("ignore", RuntimeWarning)
        out = stitch(src, [h] * n, starts, step, int(0.05 * fs)).samples[0]
        y = stitch(AudioClip(fs, np.sin(2 * np.pi * 440.0 * np.arange(fs) / fs)), _walk_irs(n), starts, step,
                   int(0.05 * fs)).samples[0]
    ref = convolve(src, h).samples[0][: len(out)]
    rel = float(np.max(np.abs(out - ref)) / np.max(np.abs(ref)))
    checks = [Check("static trajectory vs convolution (relative)", rel <= 1e-6, rel, "<= 1e-6")]
    w_in, w_out = crossfade_weights(int(0.05 * fs))
    dev = float(np.max(np.abs(w_in + w_out - 1.0)))
    checks.append(Check("crossfade weight sum deviation", dev == 0.0, dev, "== 0"))

    # y: 440 Hz tone through IRs whose delay grows and gain falls along a walk
    jumps = np.abs(np.diff(y))
    boundary = max(jumps[s - 1] for s in starts[1:])
    mask = np.ones(len(jumps), bool)
    mask[starts[1:] - 1] = False
    intra = jumps[mask].max()
    checks.append(Check("step-boundary jump / 2x intra-step jump", boundary <= 2 * intra, boundary / (2 * intra),
                        "<= 1"))
    itd = binaural_itd(math.pi / 2, fs)
    checks.append(Check("ITD at +90 deg (samples)", abs(itd - 29) <= 2, itd, "29 +- 2"))
    return checks


def binaural_itd(azimuth, sampling_rate=44100):
    """Interaural lag (samples, left leads positive) of a rendered single plane-wave arrival."""
    from .propagation import DirectSound, EnergyHistogram
    from .spatial import MicrophoneConfig, spatialize

    bands = SimulationParams().bands
    hist = EnergyHistogram(sampling_rate, bands, int(0.05 * sampling_rate))
    direction = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
    hist.direct = DirectSound(0.01, np.full(bands.count, 1.0 / bands.count), direction, "visible")
    ir = spatialize(hist, MicrophoneConfig("binaural")).channels
    xc = np.correlate(ir[1], ir[0], mode="full")
    return float(np.argmax(xc) - (ir.shape[1] - 1))


def run_suite(name, **kw):
    if name == "shoebox":
        return shoebox_suite(**kw)
    kw.pop("rays", None)
    kw.pop("threads", None)
    kw.pop("bias", None)
    if name == "decay":
        return decay_suite(**kw)
    if name == "continuity":
        return continuity_suite(**kw)
    raise InvalidInputError(f"unknown suite {name!r}; expected one of {SUITES}")
