"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed together in the
terminal summary (see conftest.py) and immediately with ``-s``.
"""

import hashlib
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from echotrace import metrics
from echotrace.cli import main
from echotrace.materials import (AcousticMaterial, MaterialDatabase, coefficient_at, load_material_database,
                                 resolve_assignment)
from echotrace.oracle import Shoebox, eyring_rt60, image_source_arrays, oracle_drr
from echotrace.params import SimulationParams, apply_preset
from echotrace.propagation import compute_direct, simulate
from echotrace.scene import TriangleMesh, box_mesh, build_scene
from echotrace.spatial import synthesize_pressure
from echotrace.validation import SQRT_4PI, continuity_suite, decay_suite

from conftest import BOX, LISTENER, SOURCE

RESULTS = []
OFF = dict(diffraction_enabled=False, transmission_enabled=False, air_enabled=False)


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def _specular_params(rays, seed=0):
    return SimulationParams(num_source_rays=rays, num_listener_rays=1000, max_source_depth=2, max_listener_depth=2,
                            band_count=1, max_ir_seconds=0.5, direct_enabled=False, rng_seed=seed, **OFF)


def test_1_shoebox_oracle():
    box = Shoebox(BOX, SOURCE, LISTENER, 0.2)
    scene = build_scene(box_mesh(BOX), AcousticMaterial.uniform("specular", 0.2, 0.0))
    p = _specular_params(1_000_000).replace(direct_enabled=True, thread_count=1)
    t0 = time.perf_counter()
    h = simulate(scene, SOURCE, LISTENER, p)
    elapsed = time.perf_counter() - t0
    d, e, _, o = image_source_arrays(box, 1)
    first = sorted((r for r in h.early_reflections if r.bounces == 1), key=lambda r: r.delay)
    bin_s = h.bin_duration
    direct_bins = abs(h.direct.delay - d[0]) / bin_s
    ok = len(first) == 6 and direct_bins <= 1.0 and elapsed < 60.0
    dt = de = math.inf
    if len(first) == 6:
        dt = max(abs(r.delay - x) for r, x in zip(first, d[o == 1])) / bin_s
        de = max(abs(r.energy.sum() - x) / x for r, x in zip(first, e[o == 1]))
        ok = ok and dt <= 1.0 and de <= 0.05
    record(1, "shoebox vs image sources", ok,
           f"clusters={len(first)} direct={direct_bins:.2f} bin, first-order delay={dt:.2f} bin, "
           f"energy={100 * de:.2f} %, run={elapsed:.1f} s")


ROOMS = [((4.0, 3.0, 2.5), (1.0, 1.0, 1.2), (2.7, 2.1, 1.5)),
         ((9.0, 7.0, 3.2), (2.0, 1.5, 1.4), (6.3, 4.9, 1.6))]


def test_2_reverberation_vs_eyring():
    ok = True
    parts = []
    for size, s, l in ROOMS:
        rts = []
        for alpha in (0.1, 0.2, 0.4):
            scene = build_scene(box_mesh(size), AcousticMaterial.uniform("wall", alpha, 0.5))
            p = SimulationParams(max_source_depth=256, **OFF)
            ir = synthesize_pressure(simulate(scene, s, l, p))
            fit = metrics.rt60(ir.channels[0], ir.sampling_rate)
            box = Shoebox(size, s, l, alpha)
            ratio = fit.rt60 / eyring_rt60(box.volume, box.surfaces())
            ok = ok and fit.valid and abs(ratio - 1) <= 0.25
            rts.append(fit.rt60)
            parts.append(f"{size[0]:g}x{size[1]:g} a={alpha}: {ratio:.3f}")
        ok = ok and rts[0] > rts[1] > rts[2]
    record(2, "RT60 / Eyring within 25 %, decreasing in absorption", ok, "; ".join(parts))


def test_3_drr_and_canary():
    box = Shoebox(BOX, SOURCE, LISTENER, 0.2)
    scene = build_scene(box_mesh(BOX), AcousticMaterial.uniform("wall", 0.2, 0.5))
    p = SimulationParams(max_source_depth=256, max_ir_seconds=1.0, **OFF)
    h = simulate(scene, SOURCE, LISTENER, p)
    ref = oracle_drr(box, max_delay=p.max_ir_seconds)
    err = metrics.drr(synthesize_pressure(h).channels[0], p.sampling_rate).db - ref
    biased = metrics.drr(synthesize_pressure(h, indirect_gain=SQRT_4PI).channels[0], p.sampling_rate).db - ref
    # the biased build must miss the 1.5 dB tolerance by at least 9 dB
    margin = abs(biased) - 1.5
    record(3, "DRR unbiased, sqrt(4 pi) canary caught", abs(err) <= 1.5 and margin >= 9.0,
           f"error={err:+.2f} dB, canary error={biased:+.2f} dB (fails by {margin:.2f} dB)")


def test_4_speed_quality_tradeoff():
    rng = np.random.default_rng(2024)
    errs, t_hq, t_hs = [], 0.0, 0.0
    for i in range(10):
        size = rng.uniform([3.0, 3.0, 2.4], [8.0, 8.0, 3.5])
        s, l = rng.uniform(0.5, size - 0.5), rng.uniform(0.5, size - 0.5)
        scene = build_scene(box_mesh(size), AcousticMaterial.uniform("wall", rng.uniform(0.15, 0.5), 0.5))
        base = SimulationParams(max_ir_seconds=1.5, rng_seed=i, thread_count=1)
        fits = []
        for mode in ("high_quality", "high_speed"):
            t0 = time.perf_counter()
            h = simulate(scene, s, l, apply_preset(base, mode))
            dt = time.perf_counter() - t0
            if mode == "high_quality":
                t_hq += dt
            else:
                t_hs += dt
            fits.append(metrics.rt60(synthesize_pressure(h, rng_seed=i).channels[0], base.sampling_rate))
        errs.append(metrics.relative_rt60_error([fits[1]], [fits[0]]).percent)
    med, speedup = float(np.median(errs)), t_hq / t_hs
    record(4, "high_speed vs high_quality", med <= 20.0 and speedup >= 4.0,
           f"median RT60 error={med:.2f} %, speedup={speedup:.1f}x ({t_hq:.0f} s / {t_hs:.0f} s)")


def test_5_synthetic_decay():
    checks = decay_suite()
    record(5, "synthetic decay metrics", all(c.passed for c in checks),
           ", ".join(f"{c.name}={c.value:.4g}" for c in checks))


def _render(tmp_path, name, threads, mic):
    out = tmp_path / f"{name}.wav"
    r = CliRunner().invoke(main, ["render-ir", "--scene", "shoebox:5x4x3", "--absorption", "0.25",
                                  "--scattering", "0.4", "--source", "1", "1.2", "1.3", "--listener", "3.6",
                                  "2.9", "1.6", "--set", "num_source_rays=16384", "--set", "num_listener_rays=16384",
                                  "--set", "max_ir_seconds=0.6", "--mic", mic, "--seed", "42", "--threads",
                                  str(threads), "--out", str(out)])
    assert r.exit_code == 0, r.output
    return hashlib.sha256(out.read_bytes()).hexdigest()


def test_6_determinism(tmp_path):
    ok = True
    for mic in ("mono", "binaural"):
        digests = {_render(tmp_path, f"{mic}_{t}_{k}", t, mic) for t in (1, 4) for k in range(2)}
        ok = ok and len(digests) == 1
    record(6, "byte-identical renders for 1 and 4 threads", ok, "mono and binaural, two runs per thread count")


def test_7_continuity():
    checks = continuity_suite()
    record(7, "continuity", all(c.passed for c in checks), ", ".join(f"{c.name}={c.value:.4g}" for c in checks))


def _edge_sweep(diffraction):
    v = np.array([[2.0, -5, -5], [2.0, 5, -5], [2.0, 5, 5], [2.0, -5, 5]])
    scene = build_scene(TriangleMesh(v, [[0, 1, 2], [0, 2, 3]]), AcousticMaterial.uniform("panel", 0.2, 0.0))
    p = SimulationParams(diffraction_enabled=diffraction, transmission_enabled=False, air_enabled=False)
    edge = np.array([2.0, 5.0, 0.0])
    u = edge / np.linalg.norm(edge)
    energies = []
    # listener on a 2 m arc around the edge, from deep shadow (-40 deg) into the lit zone (+40 deg)
    for deg in np.arange(-40.0, 40.5, 1.0):
        c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
        lis = edge + 2.0 * np.array([c * u[0] - s * u[1], s * u[0] + c * u[1], 0.0])
        energies.append(compute_direct(scene, np.zeros(3), lis, p).energy.sum())
    e = np.array(energies)
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = 10 * np.log10(e[1:]) - 10 * np.log10(e[:-1])
    steps[(e[:-1] == 0) & (e[1:] > 0)] = np.inf
    steps[(e[:-1] == 0) & (e[1:] == 0)] = 0.0
    return steps


def test_8_diffraction_smoothness():
    on, off = _edge_sweep(True), _edge_sweep(False)
    ok = bool(np.all(on >= 0) and np.max(np.abs(on)) <= 3.0 and np.max(off) > 20.0)
    record(8, "edge sweep", ok, f"on: monotone={bool(np.all(on >= 0))}, max jump={np.max(np.abs(on)):.2f} dB; "
                                f"off: max step={np.max(off):.1f} dB")


def test_9_randomization():
    db = load_material_database()
    cats = list(db.category_to_material)
    a = resolve_assignment(db, cats * 2, "randomized", seed=99)
    b = resolve_assignment(db, cats * 2, "randomized", seed=99)
    same = a.materials == b.materials and np.array_equal(a.indices, b.indices)
    one = MaterialDatabase({"m": AcousticMaterial.uniform("m", 0.4, 0.5)}, {"x": ["m"]})
    draws = np.array([[coefficient_at(resolve_assignment(one, ["x"], "randomized", seed=s).materials[0], k, 1000)
                       for k in ("absorption", "scattering")] for s in range(1000)])
    mean_err = np.abs(draws.mean(axis=0) - [0.4, 0.5])
    std = draws.std(axis=0, ddof=1)
    ok = same and bool(np.all(mean_err <= 0.02) and np.all((std >= 0.07) & (std <= 0.13)))
    record(9, "material randomization", ok,
           f"reproducible={same}, mean error={mean_err.max():.4f}, std={std.min():.4f}..{std.max():.4f}")


def test_10_convergence():
    box = Shoebox(BOX, SOURCE, LISTENER, 0.2)
    scene = build_scene(box_mesh(BOX), AcousticMaterial.uniform("specular", 0.2, 0.0))
    d, e, _, o = image_source_arrays(box, 1)
    d1, e1 = d[o == 1], e[o == 1]
    counts = [10**4, 10**5, 10**6]
    rms = []
    for n, seeds in zip(counts, (48, 16, 6)):
        errs = []
        for seed in range(seeds):
            h = simulate(scene, SOURCE, LISTENER, _specular_params(n, seed))
            first = [r for r in h.early_reflections if r.bounces == 1]
            for x, ex in zip(d1, e1):
                got = [r.energy.sum() for r in first if abs(r.delay - x) <= h.bin_duration]
                errs.append((got[0] if got else 0.0) / ex - 1.0)
        rms.append(float(np.sqrt(np.mean(np.square(errs)))))
    slope = float(np.polyfit(np.log10(counts), np.log10(rms), 1)[0])
    record(10, "Monte-Carlo convergence", abs(slope + 0.5) <= 0.15,
           f"slope={slope:.3f}, rms errors={', '.join(f'{x:.4f}' for x in rms)}")
