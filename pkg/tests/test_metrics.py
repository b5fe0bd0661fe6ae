import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echotrace.errors import InvalidInputError
from echotrace.metrics import (DecayFit, direct_onset, drr, relative_rt60_error, rt60, schroeder_edc,
                               summarize)

FS = 44100


def _decay_ir(tau, seconds=2.0, seed=0, noise=True):
    t = np.arange(int(seconds * FS)) / FS
    carrier = np.random.default_rng(seed).normal(size=len(t)) if noise else np.ones(len(t))
    return carrier * np.exp(-t / tau)


# EDC

def test_edc_of_unit_impulse():
    x = np.zeros(100)
    x[10] = 1.0
    edc = schroeder_edc(x, FS)
    assert edc.valid
    assert np.all(edc.db[:11] == 0.0)
    assert np.all(np.isneginf(edc.db[11:]))


def test_edc_of_exponential_is_straight_line(frozen):
    tau = 0.1
    edc = schroeder_edc(_decay_ir(tau, 3.0, noise=False), FS)
    sel = edc.times < 1.0
    expect = frozen["edc_slope_db_per_tau"] * edc.times[sel] / tau
    assert np.allclose(edc.db[sel], expect, atol=1e-6)


def test_edc_half_energy_at_segment_boundary():
    x = np.concatenate([np.full(1000, 0.5), np.full(1000, -0.5)])
    edc = schroeder_edc(x, FS)
    assert edc.db[1000] == pytest.approx(-10 * math.log10(2), abs=1e-9)


def test_edc_of_silence_is_invalid():
    assert not schroeder_edc(np.zeros(50), FS).valid


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4000))
def test_edc_non_increasing(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * (rng.random(n) < 0.3)
    edc = schroeder_edc(x, FS)
    if edc.valid:
        d = np.diff(edc.db)
        assert np.all((d <= 0) | np.isnan(d))
        assert edc.db[0] == 0.0


# RT60

@pytest.mark.parametrize("tau", [0.1, 0.05])
@pytest.mark.parametrize("method", ["T30", "T20"])
def test_rt60_of_exponential_decay(frozen, tau, method):
    fit = rt60(_decay_ir(tau), FS, method)
    assert fit.valid
    assert fit.rt60 == pytest.approx(frozen["rt60_per_tau"] * tau, rel=0.02)


def test_rt60_halves_with_tau():
    a, b = rt60(_decay_ir(0.1), FS).rt60, rt60(_decay_ir(0.05), FS).rt60
    assert a / b == pytest.approx(2.0, rel=0.02)


def test_pure_impulse_is_invalid():
    x = np.zeros(FS)
    x[100] = 1.0
    fit = rt60(x, FS)
    assert not fit.valid and math.isnan(fit.rt60)


def test_noise_floor_flags_fit():
    x = _decay_ir(0.1, seed=3) + 1e-2 * np.random.default_rng(4).normal(size=2 * FS)
    assert not rt60(x, FS).valid


def test_unknown_method():
    with pytest.raises(InvalidInputError):
        rt60(_decay_ir(0.1), FS, "T60")


@given(st.floats(1e-3, 1e3))
@settings(max_examples=20, deadline=None)
def test_rt60_gain_invariant(g):
    x = _decay_ir(0.08, 1.5, seed=7)
    assert rt60(g * x, FS).rt60 == pytest.approx(rt60(x, FS).rt60, rel=1e-3)


def test_band_rt60():
    fit = rt60(_decay_ir(0.1), FS, band=1000)
    assert fit.valid and fit.rt60 == pytest.approx(0.6908, rel=0.05)


# DRR

def _drr_ir(direct=1.0, tail=0.1):
    x = np.zeros(FS // 2)
    x[441] = math.sqrt(direct)
    start = 441 + int(0.0025 * FS) + 1
    x[start:start + 1000] = math.sqrt(tail / 1000)
    return x


def test_constructed_drr():
    d = drr(_drr_ir(), FS)
    assert d.db == pytest.approx(10.0, abs=0.1)
    assert d.onset == pytest.approx(441 / FS)
    assert not d.direct_only


def test_direct_only_flag():
    x = np.zeros(2000)
    x[100] = 1.0
    d = drr(x, FS)
    assert d.direct_only and d.db == math.inf


@given(st.floats(1e-3, 1e3))
def test_drr_gain_invariant(g):
    assert drr(g * _drr_ir(), FS).db == pytest.approx(drr(_drr_ir(), FS).db, abs=1e-9)


@given(st.floats(0.1, 10.0))
def test_drr_direct_scaling(g):
    x = _drr_ir()
    y = x.copy()
    y[441] *= g
    assert drr(y, FS).db - drr(x, FS).db == pytest.approx(20 * math.log10(g), abs=1e-9)


def test_external_direct_delay():
    x = _drr_ir()
    assert drr(x, FS, direct_delay=441 / FS).db == pytest.approx(drr(x, FS).db)


def test_onset_refinement():
    x = np.zeros(1000)
    x[100] = 0.5
    x[110] = 1.0
    assert direct_onset(x, FS) == 110
    with pytest.raises(InvalidInputError):
        direct_onset(np.zeros(10), FS)


# relative error

def test_identical_sets_give_zero():
    irs = [_decay_ir(t, seed=i) for i, t in enumerate((0.05, 0.08, 0.1))]
    assert relative_rt60_error(irs, irs, FS).percent == 0.0


def test_stretched_decay_ten_percent():
    # relative to b, so the set under test carries the 1.1 stretch
    taus = (0.05, 0.07, 0.1)
    a = [_decay_ir(1.1 * t, seed=i) for i, t in enumerate(taus)]
    b = [_decay_ir(t, seed=i) for i, t in enumerate(taus)]
    assert relative_rt60_error(a, b, FS).percent == pytest.approx(10.0, abs=1.0)


def test_invalid_pair_excluded():
    a = [1.0, 1.0, 1.0, 1.0, DecayFit(float("nan"), False, "T30")]
    b = [1.0, 2.0, 1.0, 1.0, 1.0]
    r = relative_rt60_error(a, b)
    assert (r.n_valid, r.excluded) == (4, 1)
    assert r.percent == pytest.approx(12.5)


def test_relative_error_errors():
    with pytest.raises(InvalidInputError):
        relative_rt60_error([1.0], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        relative_rt60_error([float("nan")], [1.0])


# summary

def test_summary_is_pure_and_serializable():
    from echotrace.materials import FrequencyBands
    x = _decay_ir(0.1)
    x[:441] = 0
    x[441] = 20.0
    bands = FrequencyBands.octaves(4, 250.0)
    a, b = summarize(x, FS, bands), summarize(x, FS, bands)
    assert a.to_dict() == b.to_dict()
    d = a.to_dict()
    assert d["rt60_valid"] and d["rt60"] == pytest.approx(0.6908, rel=0.05)
    assert d["drr"] is not None
    assert set(d["band_rt60"]) == {"250.0", "500.0", "1000.0", "2000.0"}
