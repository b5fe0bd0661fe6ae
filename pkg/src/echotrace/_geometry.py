"""Low-level geometry kernels shared by the scene and the tracers.

All functions are numba-compiled and operate on the flat arrays held by
:class:`echotrace.scene.BVH`. Triangles are intersected two-sided.
"""

import math

import numpy as np
from numba import njit

STACK_SIZE = 64
NO_HIT = -1


@njit(cache=True, nogil=True, inline="always")
def ray_triangle(ox, oy, oz, dx, dy, dz, v0, v1, v2):
    """Moller-Trumbore, two-sided. Returns (t, u, v); t = inf on a miss."""
    e1x = v1[0] - v0[0]
    e1y = v1[1] - v0[1]
    e1z = v1[2] - v0[2]
    e2x = v2[0] - v0[0]
    e2y = v2[1] - v0[1]
    e2z = v2[2] - v0[2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True, nogil=True, inline="always")
def _box_entry(bmin, bmax, ox, oy, oz, ix, iy, iz, tmax):
    t0 = 0.0
    t1 = tmax
    a = (bmin[0] - ox) * ix
    b = (bmax[0] - ox) * ix
    if a > b:
        a, b = b, a
    if a > t0:
        t0 = a
    if b < t1:
        t1 = b
    a = (bmin[1] - oy) * iy
    b = (bmax[1] - oy) * iy
    if a > b:
        a, b = b, a
    if a > t0:
        t0 = a
    if b < t1:
        t1 = b
    a = (bmin[2] - oz) * iz
    b = (bmax[2] - oz) * iz
    if a > b:
        a, b = b, a
    if a > t0:
        t0 = a
    if b < t1:
        t1 = b
    if t0 > t1 or t0 != t0 or t1 != t1:
        return np.inf
    return t0


@njit(cache=True, nogil=True, inline="always")
def _inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@njit(cache=True, nogil=True)
def closest_hit(verts, tris, bmin, bmax, child, start, count, order,
                ox, oy, oz, dx, dy, dz, tmin, tmax, skip):
    """Nearest hit with tmin < t <= tmax. Ties go to the smaller triangle index.

    Returns (triangle, t, u, v); triangle is -1 when nothing is hit.
    """
    ix = _inv(dx)
    iy = _inv(dy)
    iz = _inv(dz)
    best_t = tmax
    best_tri = NO_HIT
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(bmin[node], bmax[node], ox, oy, oz, ix, iy, iz, best_t) > best_t:
            continue
        n = count[node]
        if n > 0:
            s = start[node]
            for k in range(s, s + n):
                tri = order[k]
                if tri == skip:
                    continue
                t, u, v = ray_triangle(ox, oy, oz, dx, dy, dz,
                                       verts[tris[tri, 0]], verts[tris[tri, 1]], verts[tris[tri, 2]])
                # t is inf on a miss; it must never win the tie-break against tmax = inf
                if tmin < t < np.inf and (t < best_t or (t == best_t and (best_tri == NO_HIT or tri < best_tri))):
                    best_t = t
                    best_tri = tri
                    best_u = u
                    best_v = v
        else:
            stack[sp] = node + 1
            sp += 1
            stack[sp] = child[node]
            sp += 1
    if best_tri == NO_HIT:
        return NO_HIT, np.inf, 0.0, 0.0
    return best_tri, best_t, best_u, best_v


@njit(cache=True, nogil=True)
def occluded(verts, tris, bmin, bmax, child, start, count, order,
             ox, oy, oz, dx, dy, dz, tmin, tmax, skip0, skip1):
    """True if any triangle other than skip0/skip1 is hit with tmin < t < tmax."""
    ix = _inv(dx)
    iy = _inv(dy)
    iz = _inv(dz)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(bmin[node], bmax[node], ox, oy, oz, ix, iy, iz, tmax) > tmax:
            continue
        n = count[node]
        if n > 0:
            s = start[node]
            for k in range(s, s + n):
                tri = order[k]
                if tri == skip0 or tri == skip1:
                    continue
                t, u, v = ray_triangle(ox, oy, oz, dx, dy, dz,
                                       verts[tris[tri, 0]], verts[tris[tri, 1]], verts[tris[tri, 2]])
                if t > tmin and t < tmax:
                    return True
        else:
            stack[sp] = node + 1
            sp += 1
            stack[sp] = child[node]
            sp += 1
    return False


@njit(cache=True, nogil=True)
def closest_hit_many(verts, tris, bmin, bmax, child, start, count, order,
                     origins, dirs, tmax):
    n = origins.shape[0]
    out_tri = np.empty(n, dtype=np.int64)
    out_t = np.empty(n)
    out_uv = np.empty((n, 2))
    for i in range(n):
        tri, t, u, v = closest_hit(verts, tris, bmin, bmax, child, start, count, order,
                                   origins[i, 0], origins[i, 1], origins[i, 2],
                                   dirs[i, 0], dirs[i, 1], dirs[i, 2], 0.0, tmax[i], -1)
        out_tri[i] = tri
        out_t[i] = t
        out_uv[i, 0] = u
        out_uv[i, 1] = v
    return out_tri, out_t, out_uv


@njit(cache=True, nogil=True)
def brute_force_many(verts, tris, origins, dirs, tmax):
    """Exhaustive per-triangle loop; reference for the BVH."""
    n = origins.shape[0]
    out_tri = np.full(n, NO_HIT, dtype=np.int64)
    out_t = np.full(n, np.inf)
    for i in range(n):
        best = tmax[i]
        for tri in range(tris.shape[0]):
            t, u, v = ray_triangle(origins[i, 0], origins[i, 1], origins[i, 2],
                                   dirs[i, 0], dirs[i, 1], dirs[i, 2],
                                   verts[tris[tri, 0]], verts[tris[tri, 1]], verts[tris[tri, 2]])
            if 0.0 < t < np.inf and (t < best or (t == best and (out_tri[i] == NO_HIT or tri < out_tri[i]))):
                best = t
                out_tri[i] = tri
                out_t[i] = t
    return out_tri, out_t


@njit(cache=True, nogil=True, inline="always")
def segment_edge_distance(ox, oy, oz, dx, dy, dz, seg_len, p0, p1):
    """Closest approach between a ray segment and an edge.

    Returns (distance, t along ray, s in [0, 1] along edge).
    """
    ex = p1[0] - p0[0]
    ey = p1[1] - p0[1]
    ez = p1[2] - p0[2]
    wx = ox - p0[0]
    wy = oy - p0[1]
    wz = oz - p0[2]
    a = 1.0
    b = dx * ex + dy * ey + dz * ez
    c = ex * ex + ey * ey + ez * ez
    d = dx * wx + dy * wy + dz * wz
    e = ex * wx + ey * wy + ez * wz
    den = a * c - b * b
    if den > 1e-12 * c:
        t = (b * e - c * d) / den
        s = (a * e - b * d) / den
    else:
        t = 0.0
        s = e / c
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    # re-project onto the ray for the clamped edge parameter
    t = (ex * s - wx) * dx + (ey * s - wy) * dy + (ez * s - wz) * dz
    if t < 0.0:
        t = 0.0
    elif t > seg_len:
        t = seg_len
    qx = ox + dx * t - (p0[0] + ex * s)
    qy = oy + dy * t - (p0[1] + ey * s)
    qz = oz + dz * t - (p0[2] + ez * s)
    return math.sqrt(qx * qx + qy * qy + qz * qz), t, s
