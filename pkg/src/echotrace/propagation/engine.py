"""Bidirectional path tracing driver: batching, threads, path cache, histogram."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..materials import AcousticMaterial, MaterialTable, band_air_attenuation, band_coefficients
from ..scene import nearest_surface_distance
from ..sh import rotate_directions_yaw
from . import _trace
from .direct import compute_direct
from .early import cluster_early_reflections
from .histogram import EnergyHistogram, accumulate

STAGE_SOURCE = 1
STAGE_LISTENER = 2
BATCH_BUDGET = 131072
MIN_BATCH = 256
MAX_BATCH = 4096
MIN_RADIUS = 0.05
MAX_RADIUS = 0.5


def batch_size(depth):
    """Rays per batch; depends only on path depth, never on the thread count."""
    return int(min(MAX_BATCH, max(MIN_BATCH, BATCH_BUDGET // max(1, depth))))


def batch_seed(seed, stage, batch):
    return int(np.random.SeedSequence([seed, stage, batch]).generate_state(1)[0])


def _batches(n, size):
    return [(i, min(size, n - i)) for i in range(0, n, size)]


def _table(scene, materials):
    if materials is None:
        return scene.materials
    if isinstance(materials, AcousticMaterial):
        return MaterialTable.single(materials, scene.n_triangles)
    if isinstance(materials, MaterialTable):
        if len(materials.indices) != scene.n_triangles:
            raise InvalidInputError("material table does not match the scene")
        return materials
    raise InvalidInputError("materials must be an AcousticMaterial or a MaterialTable")


def material_arrays(table, bands, transmission_on=True):
    """Per-material arrays used by the kernels.

    (reflectance, transmission, scattering, damping [Np/m], mean scattering,
    transmission probability, lobe exponent). Reflectance is 1 - a - t.
    """
    mats = table.materials
    alpha = np.array([band_coefficients(m, "absorption", bands) for m in mats])
    tau = np.array([band_coefficients(m, "transmission", bands) for m in mats])
    scat = np.array([band_coefficients(m, "scattering", bands) for m in mats])
    damp = np.array([band_coefficients(m, "damping", bands) for m in mats]) * math.log(10.0) / 10.0
    refl = np.clip(1.0 - alpha - tau, 0.0, 1.0)
    smean = scat.mean(axis=1)
    tm, rm = tau.mean(axis=1), refl.mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ptrans = np.where(tm + rm > 0, tm / (tm + rm), 0.0)
        phong = np.where(smean > 0, np.maximum(1.0, 2.0 / smean**2 - 2.0), 0.0)
    if not transmission_on:
        ptrans = np.zeros_like(ptrans)
    return (np.ascontiguousarray(refl), np.ascontiguousarray(tau), np.ascontiguousarray(scat),
            np.ascontiguousarray(damp), smean, ptrans, phong)


def geometry_arrays(scene, table):
    b = scene.bvh
    return (scene.mesh.vertices, scene.mesh.triangles, b.bmin, b.bmax, b.child, b.start, b.count, b.order,
            np.ascontiguousarray(scene.normals), np.ascontiguousarray(scene.planes),
            np.ascontiguousarray(table.indices))


def edge_arrays(scene, enabled):
    ends, norms, _ = scene.edge_arrays()
    if not enabled or len(ends) == 0:
        z = np.zeros((0, 3))
        return (z, z, z, z)
    return (np.ascontiguousarray(ends[:, 0]), np.ascontiguousarray(ends[:, 1]),
            np.ascontiguousarray(norms[:, 0]), np.ascontiguousarray(norms[:, 1]))


def plane_equations(scene):
    """(a, b, c, d) with a x + b y + c z = d for every plane id."""
    ids = scene.planes
    n = scene.normals
    p = scene.mesh.corners()[:, 0]
    out = np.zeros((int(ids.max()) + 1 if len(ids) else 0, 4))
    first = np.unique(ids, return_index=True)[1]
    for t in first:
        out[ids[t], :3] = n[t]
        out[ids[t], 3] = float(n[t] @ p[t])
    return out


@dataclass
class _Context:
    geom: tuple
    mat: tuple
    edges: tuple
    wavelengths: np.ndarray
    air_k: np.ndarray
    c: float
    params: object


def _context(scene, params, materials):
    table = _table(scene, materials)
    bands = params.bands
    c = params.speed_of_sound or scene.speed_of_sound
    air_k = (band_air_attenuation(params.air, bands) * math.log(10.0) / 10.0 if params.air_enabled
             else np.zeros(bands.count))
    return _Context(geometry_arrays(scene, table), material_arrays(table, bands, params.transmission_enabled),
                    edge_arrays(scene, params.diffraction_enabled), c / bands.as_array(),
                    np.ascontiguousarray(air_k), c, params)


def _run(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass
class SourcePaths:
    """Stored source paths, one vertex-array tuple per batch (in batch order)."""

    source: np.ndarray
    batches: list
    n_rays: int
    pool: tuple
    pool_start: np.ndarray
    n_pool_paths: int

    @property
    def n_vertices(self):
        return sum(len(b[0]) for b in self.batches)

    def vertex_count(self, path):
        """Vertices of global path index ``path``."""
        size = self.batches[0][12].shape[0] - 1 if self.batches else 0
        b, i = divmod(path, size)
        ps = self.batches[b][12]
        return int(ps[i + 1] - ps[i])

    def path(self, path):
        """Dict of vertex arrays for one path (positions, throughputs, lengths, triangles, labels)."""
        size = self.batches[0][12].shape[0] - 1
        b, i = divmod(path, size)
        v = self.batches[b]
        s0, s1 = v[12][i], v[12][i + 1]
        return {"position": v[0][s0:s1], "throughput": v[1][s0:s1], "length": v[3][s0:s1],
                "triangle": v[4][s0:s1], "label": v[5][s0:s1]}


def _build_pool(batches, n_pool_paths, n_bands):
    parts = []
    starts = []
    offset = 0
    remaining = n_pool_paths
    for v in batches:
        if remaining <= 0:
            break
        ps = v[12]
        npaths = min(remaining, len(ps) - 1)
        end = ps[npaths]
        sel = slice(0, end)
        parts.append((v[0][sel], v[1][sel], v[3][sel], v[4][sel], v[5][sel], v[9][sel], v[11][sel]))
        # start index of each vertex's path, in pool numbering
        counts = np.diff(ps[:npaths + 1])
        starts.append(np.repeat(ps[:npaths], counts) + offset)
        offset += end
        remaining -= npaths
    if not parts:
        return ((np.zeros((0, 3)), np.zeros((0, n_bands)), np.zeros(0), np.zeros(0, np.int64),
                 np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, np.int64)), np.zeros(0, np.int64))
    pool = tuple(np.ascontiguousarray(np.concatenate([p[i] for p in parts])) for i in range(7))
    return pool, np.ascontiguousarray(np.concatenate(starts).astype(np.int64))


def _trace_sources(ctx, source):
    p = ctx.params
    n = p.num_source_rays
    depth = p.max_source_depth
    items = _batches(n, batch_size(depth))
    src = np.asarray(source, dtype=float)

    def work(item):
        start, count = item
        seed = batch_seed(p.rng_seed, STAGE_SOURCE, start // batch_size(depth))
        return _trace.trace_source_batch(ctx.geom, ctx.mat, ctx.edges, ctx.wavelengths, ctx.air_k, src, count,
                                         depth, seed, p.energy_cutoff, p.transmission_enabled,
                                         p.diffraction_enabled)

    batches = _run(work, items, p.thread_count)
    n_pool_paths = min(p.pool_paths, n)
    pool, pool_start = _build_pool(batches, n_pool_paths, len(ctx.air_k))
    return SourcePaths(src, batches, n, pool, pool_start, n_pool_paths)


class PathCache:
    """Reuses source paths across simulate calls with the same scene, source and params.

    Holds a single entry, so memory stays bounded along a trajectory.
    """

    def __init__(self):
        self._key = None
        self._paths = None
        self._refs = ()
        self.hits = 0
        self.misses = 0

    def clear(self):
        self._key = None
        self._paths = None
        self._refs = ()

    def get(self, key, build, refs=()):
        """Cached paths for ``key``; ``refs`` keeps objects keyed by id() alive."""
        if self._key is not None and self._key == key:
            self.hits += 1
            return self._paths
        self.misses += 1
        paths = build()
        self._key = key
        self._paths = paths
        self._refs = tuple(refs)
        return paths


_default_cache = PathCache()


def default_path_cache():
    return _default_cache


def _cache_key(scene, source, params, materials):
    relevant = params.replace(thread_count=1, num_listener_rays=1, max_listener_depth=1, receiver_radius=None,
                              direct_enabled=True, indirect_sh_order=0, direct_sh_order=0)
    return (id(scene), id(materials), tuple(float(x) for x in source), relevant.digest())


def trace_source_paths(scene, source, params, materials=None, cache=None):
    """Trace and store all source paths (batched, deterministic for any thread count)."""
    if params.num_source_rays < 1:
        raise InvalidInputError("num_source_rays must be >= 1")
    ctx = _context(scene, params, materials)
    if cache is None:
        return _trace_sources(ctx, source)
    return cache.get(_cache_key(scene, source, params, materials), lambda: _trace_sources(ctx, source),
                     (scene, materials))


def auto_receiver_radius(scene, listener):
    d = nearest_surface_distance(scene, listener)
    if not np.isfinite(d):
        return MAX_RADIUS
    return float(min(MAX_RADIUS, max(MIN_RADIUS, 0.9 * d)))


@dataclass
class PathRecords:
    """Path contributions: unfolded length (m), per-band energy, world-frame arrival direction."""

    length: np.ndarray
    energy: np.ndarray
    direction: np.ndarray
    early: np.ndarray
    planes: np.ndarray

    @classmethod
    def concat(cls, parts, n_bands):
        if not parts:
            return cls(np.zeros(0), np.zeros((0, n_bands)), np.zeros((0, 3)), np.zeros(0, np.int8),
                       np.zeros((0, 2), np.int64))
        return cls(*(np.concatenate([p[i] for p in parts]) for i in range(5)))


def _chunks(items, threads):
    """Consecutive groups of at most ``threads`` items (at least one)."""
    k = max(1, threads)
    return [items[i:i + k] for i in range(0, len(items), k)]


def iter_listener_records(scene, listener, source_paths, params, materials=None, radius=None,
                          light_tracing=True):
    """Path records reaching ``listener``, one raw part per batch, in batch order.

    At most ``thread_count`` parts are alive at a time, which bounds memory
    for long, weakly absorbing paths.
    """
    ctx = _context(scene, params, materials)
    p = params
    lis = np.asarray(listener, dtype=float)
    src = source_paths.source
    if radius is None:
        radius = p.receiver_radius or auto_receiver_radius(scene, lis)
    n_src = float(source_paths.n_rays)
    n_lis = float(p.num_listener_rays)
    m_pool = len(source_paths.pool[0])
    n_pool = n_lis * source_paths.n_pool_paths / m_pool if m_pool else 0.0

    def src_work(v):
        return _trace.source_side_records(ctx.geom, ctx.mat, ctx.air_k, src, lis, float(radius), v, n_src, n_lis,
                                          n_pool, p.max_source_depth, p.max_listener_depth,
                                          p.transmission_enabled, light_tracing)

    for chunk in _chunks(source_paths.batches, p.thread_count):
        yield from _run(src_work, chunk, p.thread_count)
    depth = p.max_listener_depth
    size = batch_size(depth)

    def lis_work(item):
        start, count = item
        seed = batch_seed(p.rng_seed, STAGE_LISTENER, start // size)
        return _trace.trace_listener_batch(ctx.geom, ctx.mat, ctx.edges, ctx.wavelengths, ctx.air_k, src, lis,
                                           count, depth, seed, p.energy_cutoff, p.transmission_enabled,
                                           p.diffraction_enabled, source_paths.pool, source_paths.pool_start,
                                           source_paths.n_pool_paths, n_src, n_lis, p.max_source_depth, True)

    for chunk in _chunks(_batches(p.num_listener_rays, size), p.thread_count):
        yield from _run(lis_work, chunk, p.thread_count)


def trace_listener_paths(scene, listener, source_paths, params, materials=None, radius=None,
                         light_tracing=True):
    """All path contributions reaching ``listener``.

    Combines listener-sphere hits of the stored source paths, light-tracing
    connections of source vertices to the listener, and listener paths with
    next-event connections to the source and to a random stored source-path
    vertex. Connection strategies are weighted by the balance heuristic.
    """
    parts = list(iter_listener_records(scene, listener, source_paths, params, materials, radius, light_tracing))
    return PathRecords.concat(parts, params.band_count)


def path_energy(path, materials, air, bands, speed_of_sound=343.0, transmitted=None, mis_weight=1.0,
                air_enabled=True):
    """Energy and delay of one explicit specular path.

    ``path`` is a sequence of points source, v_1..v_k, listener; ``materials``
    lists the AcousticMaterial hit at each interior vertex. Energy per band is
    the product of reflectances (1 - a - t, or t where ``transmitted`` is set)
    times 1/(4 pi L^2) spreading over the unfolded length L, air loss and the
    MIS weight. Returns (energy, delay).
    """
    pts = np.asarray(path, dtype=float)
    if len(pts) < 2:
        raise InvalidInputError("a path needs at least a source and a listener")
    if len(materials) != len(pts) - 2:
        raise InvalidInputError("one material per interior vertex is required")
    length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    if length <= 0:
        raise InvalidInputError("path length must be positive")
    transmitted = transmitted or [False] * len(materials)
    e = np.ones(bands.count)
    for mat, through in zip(materials, transmitted):
        tau = band_coefficients(mat, "transmission", bands)
        if through:
            e = e * tau
        else:
            e = e * (1.0 - band_coefficients(mat, "absorption", bands) - tau)
    if air_enabled:
        e = e * 10.0 ** (-band_air_attenuation(air, bands) * length / 10.0)
    return e * mis_weight / (4.0 * math.pi * length * length), length / speed_of_sound


def _warn_outside(scene, point, name):
    if not scene.contains(point, margin=1e-9):
        warnings.warn(f"{name} lies outside the scene bounds", RuntimeWarning, stacklevel=3)


def simulate(scene, source, listener, params, materials=None, orientation=0.0, cache=None, radius=None):
    """Energy histogram for one source and one listener.

    ``orientation`` is the listener yaw (radians, anticlockwise about +z);
    arrival directions are stored in the listener frame (x forward, y left,
    z up). With ``params.path_cache`` the module-level cache is used unless
    ``cache`` is given.
    """
    source = np.asarray(source, dtype=float)
    listener = np.asarray(listener, dtype=float)
    if source.shape != (3,) or listener.shape != (3,):
        raise InvalidInputError("source and listener must be 3D points")
    _warn_outside(scene, source, "source")
    _warn_outside(scene, listener, "listener")
    bands = params.bands
    hist = EnergyHistogram(params.sampling_rate, bands, params.n_bins, params.indirect_sh_order,
                           params.histogram_bin_samples)
    c = params.speed_of_sound or scene.speed_of_sound
    if params.direct_enabled:
        hist.direct = compute_direct(scene, source, listener, params, _table(scene, materials))
        if hist.direct is not None:
            d = rotate_directions_yaw(hist.direct.direction, -orientation)
            hist.direct = type(hist.direct)(hist.direct.delay, hist.direct.energy, d, hist.direct.state)
    if not params.indirect_enabled:
        return hist
    if cache is None and params.path_cache:
        cache = _default_cache
    paths = trace_source_paths(scene, source, params, materials, cache)
    early = []
    # parts are folded into the histogram as they arrive, in batch order
    for length, energy, direction, is_early, planes in iter_listener_records(scene, listener, paths, params,
                                                                              materials, radius):
        delay = length / c
        energy = energy * params.initial_pressure
        dirs = rotate_directions_yaw(direction, -orientation)
        er = is_early.astype(bool)
        if np.any(er):
            early.append((delay[er], energy[er], dirs[er], planes[er]))
        accumulate(hist, delay[~er], energy[~er], dirs[~er])
    if early:
        hist.early_reflections = cluster_early_reflections(*(np.concatenate([e[i] for e in early]) for i in range(4)),
                                                           plane_equations(scene))
    return hist
