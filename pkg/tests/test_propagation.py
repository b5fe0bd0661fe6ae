import math

import numba
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from echotrace.errors import InvalidInputError
from echotrace.materials import AcousticMaterial, AirModel, FrequencyBands, MaterialTable, air_attenuation
from echotrace.oracle import Shoebox, image_source_arrivals
from echotrace.propagation import (BLOCKED, DIFFRACTED, VISIBLE, EnergyHistogram, PathCache, accumulate,
                                   cluster_early_reflections, compute_direct, knife_edge_loss_db, path_energy,
                                   simulate)
from echotrace.propagation._common import DEAD, LAMBERT, LOBE, _dir_pdf, scatter
from echotrace.propagation.engine import material_arrays
from echotrace.scene import TriangleMesh, box_mesh, build_scene
from echotrace.sh import real_sh

from conftest import BOX, LISTENER, SOURCE, quick_params, shoebox_scene

BANDS = FrequencyBands.octaves(2)


def _hist(order=1, n_bins=100):
    return EnergyHistogram(1000, BANDS, n_bins, order)


def _total(h):
    return h.energy.sum(axis=0) + sum((r.energy for r in h.early_reflections), np.zeros(h.n_bands))


# histogram accumulation

def test_single_arrival_from_plus_z():
    h = _hist()
    accumulate(h, [0.0105], [[0.2, 0.3]], [[0, 0, 1]])
    assert h.energy[10].tolist() == [0.2, 0.3]
    assert np.allclose(h.sh[10], 0.5 * real_sh(1, [0, 0, 1]))
    assert h.sh[10, 0] == pytest.approx(h.energy[10].sum())


def test_opposite_arrivals_cancel_dipole():
    h = _hist()
    accumulate(h, [0.02, 0.02], [[1, 1], [1, 1]], [[1, 0, 0], [-1, 0, 0]])
    assert h.sh[20, 3] == pytest.approx(0.0, abs=1e-15)
    assert h.sh[20, 0] == pytest.approx(4.0)


def test_late_arrivals_are_dropped_and_counted():
    h = _hist(n_bins=10)
    assert accumulate(h, [0.005, 0.5], [[1, 1], [1, 1]], [[1, 0, 0]] * 2) == 1
    assert h.dropped == 1
    assert h.energy.sum() == 2.0


@pytest.mark.parametrize("bad", [dict(energy=[[-1.0, 0.0]]), dict(energy=[[np.nan, 0.0]]), dict(delay=[-0.1]),
                                 dict(energy=[[1.0, 1.0, 1.0]])])
def test_accumulate_rejects_bad_input(bad):
    kw = dict(delay=[0.01], energy=[[1.0, 1.0]], direction=[[1, 0, 0]])
    kw.update(bad)
    with pytest.raises(InvalidInputError):
        accumulate(_hist(), **kw)


@given(st.integers(0, 2**31), st.integers(1, 60))
def test_sh_matches_direct_summation(seed, n):
    rng = np.random.default_rng(seed)
    delay = rng.uniform(0, 0.099, n)
    e = rng.uniform(0, 1, (n, 2))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    h = _hist(order=2)
    accumulate(h, delay, e, d)
    ref = np.zeros_like(h.sh)
    for t, ei, di in zip(delay, e, d):
        ref[int(math.floor(t * 1000))] += ei.sum() * real_sh(2, di)
    assert np.allclose(h.sh, ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(h.sh[:, 0], h.energy.sum(axis=1), rtol=1e-12)


@given(st.integers(0, 2**31), st.integers(2, 80))
def test_accumulation_order_independent(seed, n):
    rng = np.random.default_rng(seed)
    delay = rng.uniform(0, 0.05, n)
    e = rng.uniform(0, 1, (n, 2))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    p = rng.permutation(n)
    a, b = _hist(), _hist()
    accumulate(a, delay, e, d)
    accumulate(b, delay[p], e[p], d[p])
    assert np.array_equal(a.energy, b.energy)
    assert np.array_equal(a.sh, b.sh)


# early reflections

def test_same_plane_paths_form_one_event(rng):
    k = 100
    ev = cluster_early_reflections(rng.uniform(0.01, 0.011, k), rng.uniform(0, 1, (k, 2)),
                                   np.tile([0, 0, -1.0], (k, 1)), np.tile([4, -1], (k, 1)))
    assert len(ev) == 1
    assert ev[0].n_paths == k and ev[0].bounces == 1


def test_plane_order_matters():
    ev = cluster_early_reflections([0.01, 0.012], [[1, 1], [1, 1]], [[1, 0, 0], [0, 1, 0]], [[4, 0], [0, 4]])
    assert len(ev) == 2


def test_cluster_weighted_mean():
    ev = cluster_early_reflections([0.01, 0.02], [[3, 0], [1, 0]], [[1, 0, 0], [1, 0, 0]], [[2, -1], [2, -1]])
    assert ev[0].delay == pytest.approx(0.0125)
    assert ev[0].energy.tolist() == [4, 0]


def test_three_bounce_sequences_rejected():
    with pytest.raises(InvalidInputError):
        cluster_early_reflections([0.01], [[1, 1]], [[1, 0, 0]], [[1, 2, 3]])


# direct sound

def test_direct_delay_at_3p43_m():
    s = shoebox_scene(size=(10, 10, 10))
    d = compute_direct(s, (1, 5, 5), (4.43, 5, 5), quick_params(speed_of_sound=343.0))
    assert d.state == VISIBLE
    assert d.delay == pytest.approx(0.010, rel=1e-12)
    assert d.energy == pytest.approx(1 / (4 * math.pi * 3.43**2), rel=1e-12)


def test_direct_doubling_distance_minus_6db():
    s = shoebox_scene(size=(20, 10, 10))
    p = quick_params()
    e1 = compute_direct(s, (1, 5, 5), (3, 5, 5), p).energy
    e2 = compute_direct(s, (1, 5, 5), (5, 5, 5), p).energy
    assert np.allclose(10 * np.log10(e2 / e1), -20 * math.log10(2), atol=1e-12)


def _occluded_scene(transmission=0.0):
    wall = AcousticMaterial.uniform("wall", 0.2, 0.0, transmission)
    v = np.array([[2.0, -5, -5], [2.0, 5, -5], [2.0, 5, 5], [2.0, -5, 5]])
    return build_scene(TriangleMesh(v, [[0, 1, 2], [0, 2, 3]]), wall)


def test_occluded_without_diffraction_or_transmission_is_blocked():
    d = compute_direct(_occluded_scene(), (0, 0, 0), (4, 0, 0), quick_params())
    assert d.state == BLOCKED
    assert np.all(d.energy == 0)


def test_transmitted_direct_scales_by_tau():
    d = compute_direct(_occluded_scene(0.3), (0, 0, 0), (4, 0, 0), quick_params(transmission_enabled=True))
    assert np.allclose(d.energy, 0.3 / (4 * math.pi * 16), rtol=1e-12)


def test_diffracted_direct_around_panel():
    d = compute_direct(_occluded_scene(), (0, 0, 0), (4, 0, 0), quick_params(diffraction_enabled=True))
    assert d.state == DIFFRACTED
    assert np.all(d.energy > 0)
    assert d.delay > 4 / 343.0


def test_knife_edge_grazing(frozen):
    assert float(knife_edge_loss_db(0.0)) == pytest.approx(frozen["knife_edge_loss_v0_db"], rel=1e-12)
    assert float(knife_edge_loss_db(-1.0)) == 0.0


@given(st.floats(-0.78, 20), st.floats(0, 5))
def test_knife_edge_monotone(v, dv):
    assert knife_edge_loss_db(v + dv) >= knife_edge_loss_db(v) - 1e-9


def test_direct_disabled_returns_none():
    assert compute_direct(shoebox_scene(), SOURCE, LISTENER, quick_params(direct_enabled=False)) is None


# path energy

def test_path_energy_inverse_square():
    e, t = path_energy([(0, 0, 0), (2, 0, 0)], [], AirModel(), BANDS, air_enabled=False)
    assert np.allclose(e, 1 / (16 * math.pi))
    assert t == pytest.approx(2 / 343.0)


def test_path_energy_half_absorption_halves():
    pts = [(0, 0, 0), (1, 1, 0), (2, 0, 0)]
    lossless, _ = path_energy(pts, [AcousticMaterial.uniform("r", 0.0)], AirModel(), BANDS, air_enabled=False)
    half, _ = path_energy(pts, [AcousticMaterial.uniform("h", 0.5)], AirModel(), BANDS, air_enabled=False)
    assert np.allclose(half, 0.5 * lossless, rtol=1e-12)


def test_path_energy_air_damping_10m():
    bands = FrequencyBands((8000.0,))
    air = AirModel()
    vac, _ = path_energy([(0, 0, 0), (10, 0, 0)], [], air, bands, air_enabled=False)
    damp, _ = path_energy([(0, 0, 0), (10, 0, 0)], [], air, bands)
    assert damp[0] / vac[0] == pytest.approx(10 ** (-10 * air_attenuation(air, 8000.0) / 10), rel=1e-12)


def test_path_energy_validates():
    with pytest.raises(InvalidInputError):
        path_energy([(0, 0, 0), (1, 0, 0), (2, 0, 0)], [], AirModel(), BANDS)


# scattering kernel

@numba.njit
def _sample_lambert(mat, n_samples, seed):
    np.random.seed(seed)
    out = np.empty((n_samples, 3))
    d = np.array([0.0, 0.0, -1.0])
    n = np.array([0.0, 0.0, 1.0])
    w = np.empty(3)
    weight = np.empty(mat[0].shape[1])
    labels = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        labels[i] = scatter(mat, 0, d, n, False, False, w, weight)
        out[i] = w
    return out, labels


def test_fully_diffuse_floor_is_cosine_hemisphere():
    table = MaterialTable.single(AcousticMaterial.uniform("diffuse", 0.1, 1.0), 1)
    mat = material_arrays(table, BANDS, False)
    dirs, labels = _sample_lambert(mat, 100_000, 7)
    assert np.all(labels == LAMBERT)
    assert np.all(dirs[:, 2] > 0)
    # cos^2(theta) and phi are uniform under the cosine law: 10 x 10 equiprobable cells
    u = np.minimum((dirs[:, 2] ** 2 * 10).astype(int), 9)
    v = np.minimum(((np.arctan2(dirs[:, 1], dirs[:, 0]) + np.pi) / (2 * np.pi) * 10).astype(int), 9)
    counts = np.bincount(u * 10 + v, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.05


def test_specular_limit_is_mirror():
    table = MaterialTable.single(AcousticMaterial.uniform("mirror", 0.1, 0.0), 1)
    dirs, _ = _sample_lambert(material_arrays(table, BANDS, False), 100, 1)
    assert np.allclose(dirs, [0, 0, 1])



@numba.njit
def _sample_glossy(mat, d, n_samples, seed):
    np.random.seed(seed)
    out = np.empty((n_samples, 3))
    n = np.array([0.0, 0.0, 1.0])
    w = np.empty(3)
    weight = np.empty(mat[0].shape[1])
    labels = np.empty(n_samples, dtype=np.int64)
    weights = np.empty(n_samples)
    for i in range(n_samples):
        labels[i] = scatter(mat, 0, d, n, False, False, w, weight)
        out[i] = w
        weights[i] = weight[0]
    return out, labels, weights


@pytest.mark.parametrize("theta_deg", [0.0, 60.0, 85.0])
def test_glossy_lobe_conserves_energy(theta_deg):
    table = MaterialTable.single(AcousticMaterial.uniform("rough", 0.1, 0.5), 1)
    t = math.radians(theta_deg)
    d = np.array([math.sin(t), 0.0, -math.cos(t)])
    dirs, labels, weights = _sample_glossy(material_arrays(table, BANDS, False), d, 20_000, 3)
    assert not np.any(labels == DEAD)
    assert np.all(dirs[:, 2] > 0)
    assert np.all(np.isin(labels, [LAMBERT, LOBE]))
    assert weights.mean() == pytest.approx(0.9, rel=1e-9)


@pytest.mark.parametrize("exponent,theta_deg", [(6.0, 0.0), (6.0, 70.0), (30.0, 85.0), (1.0, 45.0)])
def test_folded_lobe_pdf_is_normalized(exponent, theta_deg):
    # midpoint rule over the upper hemisphere
    nt, nphi = 600, 1200
    th = (np.arange(nt) + 0.5) * (np.pi / 2) / nt
    ph = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
    t = math.radians(theta_deg)
    a = (-math.sin(t), 0.0, math.cos(t))  # previous vertex, incidence from above
    total = 0.0
    for x in th:
        cx, cy, cz = np.sin(x) * np.cos(ph), np.sin(x) * np.sin(ph), np.full(nphi, np.cos(x))
        vals = [_dir_pdf(exponent, LOBE, 0.0, 0.0, 1.0, a[0], a[1], a[2], 0.0, 0.0, 0.0, u, v, w)
                for u, v, w in zip(cx, cy, cz)]
        total += np.sum(vals) * np.sin(x)
    total *= (np.pi / 2 / nt) * (2 * np.pi / nphi)
    assert total == pytest.approx(1.0, abs=5e-3)


def test_source_path_throughput_follows_reflectance():
    from echotrace.propagation import trace_source_paths
    scene = shoebox_scene(0.1, 0.5)
    p = quick_params(band_count=1, max_source_depth=64, num_source_rays=4096)
    paths = trace_source_paths(scene, SOURCE, p)
    for k in (2, 5, 10):
        total = sum(v[1][v[11] == k, 0].sum() for v in paths.batches)
        assert total / paths.n_rays == pytest.approx(0.9 ** (k - 1), rel=1e-9)


# simulation

def test_full_absorption_leaves_only_direct():
    h = simulate(shoebox_scene(1.0), SOURCE, LISTENER, quick_params())
    assert not np.any(h.energy) and not h.early_reflections
    assert h.direct.state == VISIBLE and np.all(h.direct.energy > 0)


def test_everything_disabled_gives_empty_histogram():
    h = simulate(shoebox_scene(), SOURCE, LISTENER, quick_params(direct_enabled=False, indirect_enabled=False))
    assert h.is_empty()
    assert h.energy.shape == (quick_params().n_bins, quick_params().band_count)


def test_histogram_length_bounded():
    p = quick_params(max_ir_seconds=0.1)
    h = simulate(shoebox_scene(0.05, 0.5), SOURCE, LISTENER, p)
    assert h.n_bins <= 0.1 * p.sampling_rate
    assert np.all(h.energy >= 0)


def test_direct_delay_exact_to_one_bin():
    p = quick_params()
    h = simulate(shoebox_scene(), SOURCE, LISTENER, p)
    assert abs(h.direct.delay - math.dist(SOURCE, LISTENER) / 343.0) < 1 / p.sampling_rate


def test_energy_non_increasing_in_absorption():
    p = quick_params(band_count=2)
    totals = [_total(simulate(shoebox_scene(a, 0.5), SOURCE, LISTENER, p)) for a in (0.05, 0.1, 0.2, 0.4, 0.8)]
    for hi, lo in zip(totals, totals[1:]):
        assert np.all(lo <= hi)


def test_no_transmission_means_no_crossing():
    # listener outside a closed box: nothing inside can reach it
    s = shoebox_scene(0.2, 0.5, transmission=0.3)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        h = simulate(s, SOURCE, (6.0, 1.5, 1.2), quick_params(direct_enabled=False))
    assert not np.any(h.energy) and not h.early_reflections


def test_specular_first_order_clusters_match_image_sources():
    p = quick_params(num_source_rays=65536, num_listener_rays=4096, max_source_depth=2, max_listener_depth=2,
                     band_count=1, speed_of_sound=343.0)
    h = simulate(shoebox_scene(0.2, 0.0), SOURCE, LISTENER, p)
    first = sorted(r.delay for r in h.early_reflections if r.bounces == 1)
    ref = sorted(a.delay for a in image_source_arrivals(Shoebox(BOX, SOURCE, LISTENER, 0.2), 1) if a.order == 1)
    assert len(first) == 6
    assert np.all(np.abs(np.array(first) - ref) <= 1 / p.sampling_rate)


def test_cache_matches_uncached_run():
    p = quick_params(band_count=2)
    plain = simulate(shoebox_scene(0.3, 0.5), SOURCE, LISTENER, p)
    cache = PathCache()
    other = simulate(shoebox_scene(0.1, 0.2, size=(5, 4, 3)), SOURCE, LISTENER, p, cache=cache)
    cache.clear()
    scene = shoebox_scene(0.3, 0.5)
    cold = simulate(scene, SOURCE, LISTENER, p, cache=cache)
    warm = simulate(scene, SOURCE, LISTENER, p, cache=cache)
    assert (cache.misses, cache.hits) == (2, 1)
    assert not np.array_equal(plain.energy, other.energy)
    assert np.array_equal(plain.energy, cold.energy)
    assert np.array_equal(plain.energy, warm.energy)


def test_cache_keyed_on_listener_independent_params():
    p = quick_params(band_count=2)
    cache = PathCache()
    scene = shoebox_scene(0.3, 0.5)
    simulate(scene, SOURCE, LISTENER, p, cache=cache)
    simulate(scene, SOURCE, (3.0, 2.0, 1.0), p.replace(num_listener_rays=1024), cache=cache)
    assert cache.hits == 1
    simulate(scene, (1.5, 1.0, 1.2), LISTENER, p, cache=cache)
    assert cache.misses == 2


def test_thread_count_does_not_change_result():
    p = quick_params(band_count=2)
    a = simulate(shoebox_scene(0.2, 0.5), SOURCE, LISTENER, p)
    b = simulate(shoebox_scene(0.2, 0.5), SOURCE, LISTENER, p.replace(thread_count=3))
    assert np.array_equal(a.energy, b.energy) and np.array_equal(a.sh, b.sh)


def test_seed_changes_result():
    p = quick_params(band_count=2)
    a = simulate(shoebox_scene(0.2, 0.5), SOURCE, LISTENER, p)
    b = simulate(shoebox_scene(0.2, 0.5), SOURCE, LISTENER, p.replace(rng_seed=1))
    assert not np.array_equal(a.energy, b.energy)


def test_listener_orientation_rotates_direct():
    p = quick_params(indirect_enabled=False)
    s = shoebox_scene()
    a = simulate(s, (1, 1.5, 1.2), (3, 1.5, 1.2), p, orientation=0.0)
    b = simulate(s, (1, 1.5, 1.2), (3, 1.5, 1.2), p, orientation=math.pi / 2)
    assert np.allclose(a.direct.direction, [-1, 0, 0])
    assert np.allclose(b.direct.direction, [0, 1, 0])


def test_point_outside_scene_warns():
    with pytest.warns(RuntimeWarning):
        simulate(shoebox_scene(), (10, 10, 10), LISTENER, quick_params(indirect_enabled=False))


def test_bad_point_shape_rejected():
    with pytest.raises(InvalidInputError):
        simulate(shoebox_scene(), (1, 1), LISTENER, quick_params())


def test_accumulate_accepts_no_arrivals():
    h = _hist()
    assert accumulate(h, np.zeros(0), np.zeros((0, 2)), np.zeros((0, 3))) == 0
    assert h.is_empty()
