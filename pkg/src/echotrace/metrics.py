"""Room-acoustic metrics: Schroeder decay, RT60, DRR and relative RT60 error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal

from .errors import InvalidInputError

FIT_RANGES = {"T30": (-5.0, -35.0), "T20": (-5.0, -25.0)}
FLOOR_MARGIN_DB = 10.0
ONSET_THRESHOLD_DB = -20.0
ONSET_REFINE = 1e-3
PRE_WINDOW = 0.5e-3
DIRECT_WINDOW = 2.5e-3
ETC_SMOOTHING = 0.01


def _channel(x):
    x = np.asarray(getattr(x, "channels", x), dtype=float)
    if x.ndim == 2:
        x = x[0]
    if x.ndim != 1:
        raise InvalidInputError("expected a single IR channel")
    return x


def octave_filter(x, sampling_rate, center):
    """Zero-phase octave band-pass around ``center`` (4th-order Butterworth, forward-backward)."""
    nyq = 0.5 * sampling_rate
    lo = center / math.sqrt(2.0)
    hi = min(center * math.sqrt(2.0), 0.95 * nyq)
    if lo >= hi:
        raise InvalidInputError(f"band at {center} Hz lies above Nyquist")
    sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sampling_rate, output="sos")
    return signal.sosfiltfilt(sos, x)


@dataclass(frozen=True)
class EnergyDecayCurve:
    times: np.ndarray
    db: np.ndarray
    valid: bool = True


def schroeder_edc(ir, sampling_rate=44100, band=None):
    """Backward-integrated energy in dB, 0 dB at t = 0; invalid for a silent IR."""
    x = _channel(ir)
    if band is not None:
        x = octave_filter(x, sampling_rate, band)
    e = x * x
    tail = np.cumsum(e[::-1])[::-1]
    t = np.arange(len(x)) / sampling_rate
    total = tail[0] if len(tail) else 0.0
    if not total > 0:
        return EnergyDecayCurve(t, np.full(len(x), -np.inf), False)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(tail / total)
    # cumulative sums can wobble by one ulp; enforce the monotone shape exactly
    db = np.minimum.accumulate(db)
    return EnergyDecayCurve(t, db, True)


@dataclass(frozen=True)
class DecayFit:
    rt60: float
    valid: bool
    method: str
    slope: float = float("nan")  # dB/s
    intercept: float = float("nan")
    r2: float = float("nan")
    reason: str = ""

    def __float__(self):
        return self.rt60


def _etc_floor(x, sampling_rate):
    """Smoothed energy-time curve (dB re its peak) and the level of its last 10 %."""
    e = x * x
    n = max(1, int(ETC_SMOOTHING * sampling_rate))
    etc = np.convolve(e, np.ones(n) / n, mode="same")
    peak = etc.max()
    with np.errstate(divide="ignore"):
        etc_db = 10.0 * np.log10(etc / peak)
        floor = 10.0 * np.log10(max(e[-max(1, len(e) // 10):].mean(), 1e-300) / peak)
    return etc_db, floor


def rt60(ir, sampling_rate=44100, method="T30", band=None):
    """Reverberation time from a line fit to the Schroeder curve.

    The fit covers [-5, -35] dB (T30) or [-5, -25] dB (T20) and is
    extrapolated to -60 dB. The result is flagged invalid when the curve
    does not span the range or the range end lies less than 10 dB above the
    tail noise floor.
    """
    if method not in FIT_RANGES:
        raise InvalidInputError(f"unknown RT60 method {method!r}; expected T20 or T30")
    x = _channel(ir)
    if band is not None:
        x = octave_filter(x, sampling_rate, band)
    edc = schroeder_edc(x, sampling_rate)
    if not edc.valid:
        return DecayFit(float("nan"), False, method, reason="silent IR")
    hi, lo = FIT_RANGES[method]
    db = edc.db
    i0 = int(np.argmax(db <= hi))
    if not np.any(db <= lo):
        return DecayFit(float("nan"), False, method, reason="insufficient decay range")
    i1 = int(np.argmax(db <= lo))
    if i1 - i0 < 3:
        return DecayFit(float("nan"), False, method, reason="insufficient decay range")
    etc_db, floor = _etc_floor(x, sampling_rate)
    if etc_db[i1] < floor + FLOOR_MARGIN_DB:
        return DecayFit(float("nan"), False, method, reason="fit range too close to the noise floor")
    t = edc.times[i0:i1 + 1]
    y = db[i0:i1 + 1]
    slope, intercept = np.polyfit(t, y, 1)
    pred = slope * t + intercept
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(((y - pred) ** 2).sum()) / ss if ss > 0 else 0.0
    if not slope < 0:
        return DecayFit(float("nan"), False, method, slope, intercept, r2, "non-decaying curve")
    return DecayFit(-60.0 / slope, True, method, float(slope), float(intercept), r2)


@dataclass(frozen=True)
class DrrResult:
    db: float
    onset: float  # s
    window: tuple  # (start, end) s
    direct_only: bool = False


def direct_onset(ir, sampling_rate=44100):
    """First sample within 20 dB of the peak, moved to the energy maximum of the next 1 ms."""
    x = _channel(ir)
    e = x * x
    if not np.any(e > 0):
        raise InvalidInputError("cannot locate the direct sound of a silent IR")
    thr = e.max() * 10.0 ** (ONSET_THRESHOLD_DB / 10.0)
    i = int(np.argmax(e >= thr))
    j = i + max(1, int(round(ONSET_REFINE * sampling_rate)))
    return i + int(np.argmax(e[i:j]))


def drr(ir, sampling_rate=44100, direct_window=DIRECT_WINDOW, direct_delay=None):
    """Direct-to-reverberant ratio in dB.

    Direct energy is summed over [onset - 0.5 ms, onset + direct_window];
    reverberant energy is everything after. ``direct_delay`` (s) overrides
    onset detection.
    """
    x = _channel(ir)
    e = x * x
    if direct_delay is None:
        onset = direct_onset(x, sampling_rate)
    else:
        onset = int(round(direct_delay * sampling_rate))
    a = max(0, onset - int(round(PRE_WINDOW * sampling_rate)))
    b = onset + int(round(direct_window * sampling_rate)) + 1
    direct = float(e[a:b].sum())
    late = float(e[b:].sum())
    win = (a / sampling_rate, b / sampling_rate)
    if late <= 0:
        return DrrResult(float("inf"), onset / sampling_rate, win, True)
    if direct <= 0:
        return DrrResult(float("-inf"), onset / sampling_rate, win, False)
    return DrrResult(10.0 * math.log10(direct / late), onset / sampling_rate, win, False)


@dataclass(frozen=True)
class RelativeError:
    percent: float
    n_valid: int
    excluded: int


def _rt60_value(item, sampling_rate, method):
    if isinstance(item, DecayFit):
        return item.rt60 if item.valid else float("nan")
    if np.isscalar(item):
        return float(item)
    return rt60(item, sampling_rate, method).rt60


def relative_rt60_error(a, b, sampling_rate=44100, method="T30"):
    """Mean |RT60_a - RT60_b| / RT60_b x 100 over valid pairs.

    Items may be IRs, DecayFit results or RT60 values; NaN marks an invalid
    item. Pairs with an invalid member are excluded and counted.
    """
    if len(a) != len(b):
        raise InvalidInputError("RT60 sets must be paired")
    errs = []
    excluded = 0
    for x, y in zip(a, b):
        ra = _rt60_value(x, sampling_rate, method)
        rb = _rt60_value(y, sampling_rate, method)
        if not (np.isfinite(ra) and np.isfinite(rb) and ra > 0 and rb > 0):
            excluded += 1
            continue
        errs.append(abs(ra - rb) / rb * 100.0)
    if not errs:
        raise InvalidInputError("no valid RT60 pairs")
    return RelativeError(float(np.mean(errs)), len(errs), excluded)


@dataclass
class AcousticSummary:
    rt60: Optional[float]
    rt60_valid: bool
    band_rt60: dict
    drr: float
    direct_only: bool
    direct_window: tuple
    edc: EnergyDecayCurve = field(repr=False, default=None)

    def to_dict(self):
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)
        return {
            "rt60": num(self.rt60),
            "rt60_valid": self.rt60_valid,
            "band_rt60": {str(k): num(v.rt60) for k, v in self.band_rt60.items()},
            "band_rt60_valid": {str(k): v.valid for k, v in self.band_rt60.items()},
            "drr": num(self.drr) if np.isfinite(self.drr) else None,
            "direct_only": self.direct_only,
            "direct_window": [float(x) for x in self.direct_window],
        }


def summarize(ir, sampling_rate=44100, bands=None, method="T30"):
    """Broadband and per-band RT60, DRR and EDC of one channel."""
    x = _channel(ir)
    fit = rt60(x, sampling_rate, method)
    per_band = {}
    for f in (bands.centers if bands is not None else ()):
        if f < 0.45 * sampling_rate:
            per_band[f] = rt60(x, sampling_rate, method, band=f)
    d = drr(x, sampling_rate)
    return AcousticSummary(fit.rt60 if fit.valid else None, fit.valid, per_band, d.db, d.direct_only, d.window,
                           schroeder_edc(x, sampling_rate))
