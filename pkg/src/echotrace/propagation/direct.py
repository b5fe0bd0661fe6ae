"""Direct sound with occlusion, edge diffraction and transmission."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _geometry as geo
from ..materials import band_air_attenuation, band_coefficients
from ..scene import _bvh_args

VISIBLE = "visible"
DIFFRACTED = "diffracted"
TRANSMITTED = "transmitted"
BLOCKED = "blocked"
# knife-edge loss is zero below this Fresnel parameter
FRESNEL_LIT_LIMIT = -0.78
_SEARCH_STEPS = 60


@dataclass(frozen=True)
class DirectSound:
    delay: float
    energy: np.ndarray
    direction: np.ndarray  # from the listener towards the apparent source
    state: str


def knife_edge_loss_db(v):
    """Single knife-edge diffraction loss J(v) in dB (zero for v <= -0.78)."""
    v = np.asarray(v, dtype=float)
    x = v - 0.1
    j = 6.9 + 20.0 * np.log10(np.sqrt(x * x + 1.0) + x)
    return np.where(v > FRESNEL_LIT_LIMIT, np.maximum(j, 0.0), 0.0)


def _segment_blockers(scene, a, b):
    """Triangles crossed by the open segment a-b, in order."""
    args = _bvh_args(scene)
    v = b - a
    dist = float(np.linalg.norm(v))
    if dist == 0.0:
        return []
    v = v / dist
    out = []
    t0 = 1e-9
    skip = -1
    while True:
        tri, t, _, _ = geo.closest_hit(*args, a[0], a[1], a[2], v[0], v[1], v[2], t0, dist - 1e-9, skip)
        if tri < 0:
            return out
        out.append(int(tri))
        t0 = t
        skip = tri
        if len(out) > 10000:
            return out


def _via_points(edges, s, l):
    """Point on each edge minimising |s - e| + |e - l| (ternary search, vectorised)."""
    p0 = np.array([e.p0 for e in edges])
    p1 = np.array([e.p1 for e in edges])
    lo = np.zeros(len(edges))
    hi = np.ones(len(edges))

    def cost(u):
        p = p0 + u[:, None] * (p1 - p0)
        return np.linalg.norm(p - s, axis=1) + np.linalg.norm(p - l, axis=1)

    for _ in range(_SEARCH_STEPS):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        left = cost(m1) <= cost(m2)
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
    u = 0.5 * (lo + hi)
    pts = p0 + u[:, None] * (p1 - p0)
    return pts, cost(u)


def compute_direct(scene, source, listener, params, materials=None):
    """Direct-path event, or None when the direct stage is disabled.

    Visible paths get 1/(4 pi r^2) spreading and air loss. With diffraction
    enabled the knife-edge loss of the least-detour edge is applied on both
    sides of the shadow boundary (Fresnel parameter of sign -/+), which keeps
    the energy continuous as the source moves into shadow. Occluded paths
    without diffraction fall back to transmission (product of the crossed
    surfaces' transmission) or are blocked. ``materials`` overrides the
    scene's material table.
    """
    if not params.direct_enabled:
        return None
    s = np.asarray(source, dtype=float)
    l = np.asarray(listener, dtype=float)
    table = materials if materials is not None else scene.materials
    bands = params.bands
    c = params.speed_of_sound or scene.speed_of_sound
    air_k = band_air_attenuation(params.air, bands) * math.log(10.0) / 10.0 if params.air_enabled else np.zeros(bands.count)
    gain = params.initial_pressure
    r = float(np.linalg.norm(l - s))
    m = bands.count
    if r == 0.0:
        return DirectSound(0.0, np.zeros(m), np.array([1.0, 0.0, 0.0]), BLOCKED)
    to_src = (s - l) / r
    blockers = _segment_blockers(scene, s, l)
    free = gain * np.exp(-air_k * r) / (4.0 * math.pi * r * r)

    diffracted = None
    if params.diffraction_enabled and scene.diffraction_edges:
        lam = c / bands.as_array()
        pts, path = _via_points(scene.diffraction_edges, s, l)
        delta = path - r
        best = int(np.argmin(delta))
        if blockers:
            # shortest detour whose legs are clear, else the shortest detour
            for i in np.argsort(delta, kind="stable"):
                if not _segment_blockers(scene, s, pts[i]) and not _segment_blockers(scene, pts[i], l):
                    best = int(i)
                    break
            v = np.sqrt(4.0 * delta[best] / lam)
            length = float(path[best])
            loss = 10.0 ** (-knife_edge_loss_db(v) / 10.0)
            e = gain * np.exp(-air_k * length) * loss / (4.0 * math.pi * length * length)
            d = pts[best] - l
            diffracted = DirectSound(length / c, e, d / np.linalg.norm(d), DIFFRACTED)
        else:
            v = -np.sqrt(4.0 * delta[best] / lam)
            return DirectSound(r / c, free * 10.0 ** (-knife_edge_loss_db(v) / 10.0), to_src, VISIBLE)
    if not blockers:
        return DirectSound(r / c, free, to_src, VISIBLE)

    transmitted = None
    if params.transmission_enabled:
        tau = np.ones(m)
        for tri in blockers:
            mat = table.material_of(tri)
            tau = tau * band_coefficients(mat, "transmission", bands)
        if np.any(tau > 0):
            transmitted = DirectSound(r / c, free * tau, to_src, TRANSMITTED)
    cands = [x for x in (diffracted, transmitted) if x is not None]
    if not cands:
        return DirectSound(r / c, np.zeros(m), to_src, BLOCKED)
    return max(cands, key=lambda x: float(x.energy.sum()))
