"""Shared numba helpers: sampling, scattering events, pdfs and MIS weights.

Vertex labels describe which scattering component produced the outgoing
direction at a vertex. Lambert vertices are the only ones that can be joined
by a deterministic connection; the other labels are treated as delta events
for MIS (their pdfs are remapped to 1 on both sides).
"""

import math

import numpy as np
from numba import njit

from .. import _geometry as geo

LAMBERT = 0
LOBE = 1
TRANSMIT = 2
DIFFRACT = 3
DEAD = -1

INV_4PI = 1.0 / (4.0 * math.pi)
EPS_OFFSET = 1e-6
# connections closer than this to the surface plane are treated as blocked
MIN_COS = 1e-7
CAPTURE_FRACTION = 0.05
CAPTURE_MAX = 0.5
CAPTURE_PROB = 0.5


@njit(cache=True, nogil=True, inline="always")
def hit(geom, ox, oy, oz, dx, dy, dz, tmax, skip):
    return geo.closest_hit(geom[0], geom[1], geom[2], geom[3], geom[4], geom[5], geom[6], geom[7],
                           ox, oy, oz, dx, dy, dz, 0.0, tmax, skip)


@njit(cache=True, nogil=True)
def visible(geom, a, b, skip0, skip1):
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    dz = b[2] - a[2]
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d <= 0.0:
        return True
    dx /= d
    dy /= d
    dz /= d
    return not geo.occluded(geom[0], geom[1], geom[2], geom[3], geom[4], geom[5], geom[6], geom[7],
                            a[0], a[1], a[2], dx, dy, dz, 1e-9, d * (1.0 - 1e-9) - 1e-9, skip0, skip1)


@njit(cache=True, nogil=True, inline="always")
def basis(n):
    """Two unit vectors completing ``n`` to an orthonormal frame."""
    if abs(n[0]) > 0.9:
        ax, ay, az = 0.0, 1.0, 0.0
    else:
        ax, ay, az = 1.0, 0.0, 0.0
    ux = ay * n[2] - az * n[1]
    uy = az * n[0] - ax * n[2]
    uz = ax * n[1] - ay * n[0]
    inv = 1.0 / math.sqrt(ux * ux + uy * uy + uz * uz)
    ux *= inv
    uy *= inv
    uz *= inv
    vx = n[1] * uz - n[2] * uy
    vy = n[2] * ux - n[0] * uz
    vz = n[0] * uy - n[1] * ux
    return ux, uy, uz, vx, vy, vz


@njit(cache=True, nogil=True)
def sample_sphere(out):
    z = 1.0 - 2.0 * np.random.random()
    r = math.sqrt(max(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * np.random.random()
    out[0] = r * math.cos(phi)
    out[1] = r * math.sin(phi)
    out[2] = z


@njit(cache=True, nogil=True)
def sample_around(axis, exponent, out):
    """Direction with pdf (exponent+1)/(2 pi) cos^exponent around ``axis``.

    exponent = 1 gives the cosine-weighted hemisphere.
    """
    u1 = np.random.random()
    u2 = np.random.random()
    c = u1 ** (1.0 / (exponent + 1.0))
    s = math.sqrt(max(0.0, 1.0 - c * c))
    phi = 2.0 * math.pi * u2
    ux, uy, uz, vx, vy, vz = basis(axis)
    a = s * math.cos(phi)
    b = s * math.sin(phi)
    out[0] = a * ux + b * vx + c * axis[0]
    out[1] = a * uy + b * vy + c * axis[1]
    out[2] = a * uz + b * vz + c * axis[2]


@njit(cache=True, nogil=True, inline="always")
def dot3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, nogil=True)
def scatter(mat, m, d, n, transmission_on, forced_lambert, wout, weight):
    """Sample the scattering event at a surface.

    ``d`` is the incident direction and ``n`` the geometric normal. Writes the
    outgoing direction to ``wout`` and the per-band weight to ``weight``.
    Returns the label (DEAD if the sample is rejected).
    """
    refl, trans, scat, smean, ptrans, phong = mat[0], mat[1], mat[2], mat[4], mat[5], mat[6]
    M = refl.shape[1]
    cosi = dot3(d, n)
    side = -1.0 if cosi > 0.0 else 1.0  # normal flipped towards the incident side
    ns = np.empty(3)
    ns[0] = n[0] * side
    ns[1] = n[1] * side
    ns[2] = n[2] * side
    pt = ptrans[m] if transmission_on else 0.0
    if forced_lambert:
        sample_around(ns, 1.0, wout)
        for b in range(M):
            weight[b] = scat[m, b] * refl[m, b]
        return LAMBERT
    u = np.random.random()
    if u < pt:
        wout[0] = d[0]
        wout[1] = d[1]
        wout[2] = d[2]
        for b in range(M):
            weight[b] = trans[m, b] / pt
        return TRANSMIT
    pr = 1.0 - pt
    s = smean[m]
    if np.random.random() < s:
        sample_around(ns, 1.0, wout)
        for b in range(M):
            weight[b] = scat[m, b] / s * refl[m, b] / pr
        return LAMBERT
    c = dot3(d, n)
    rx = d[0] - 2.0 * c * n[0]
    ry = d[1] - 2.0 * c * n[1]
    rz = d[2] - 2.0 * c * n[2]
    if phong[m] > 0.0:
        r = np.empty(3)
        r[0] = rx
        r[1] = ry
        r[2] = rz
        sample_around(r, phong[m], wout)
        # fold the part of the lobe below the surface back above it; the
        # folded lobe keeps unit mass, so reflection conserves energy
        cw = dot3(wout, ns)
        if cw < 0.0:
            wout[0] -= 2.0 * cw * ns[0]
            wout[1] -= 2.0 * cw * ns[1]
            wout[2] -= 2.0 * cw * ns[2]
        elif cw == 0.0:
            return DEAD
    else:
        wout[0] = rx
        wout[1] = ry
        wout[2] = rz
    for b in range(M):
        weight[b] = (1.0 - scat[m, b]) / (1.0 - s) * refl[m, b] / pr
    return LOBE


@njit(cache=True, nogil=True, inline="always")
def is_delta(mat, label, tri, matidx):
    if label == LAMBERT:
        return False
    if label == LOBE:
        return mat[6][matidx[tri]] <= 0.0
    return True


@njit(cache=True, nogil=True, inline="always")
def label_prob(mat, label, m, transmission_on, forced):
    """Probability of choosing ``label`` at material ``m``."""
    return _label_prob(mat[4], mat[5], label, m, transmission_on, forced)


@njit(cache=True, nogil=True, inline="always")
def _label_prob(smean, ptrans, label, m, transmission_on, forced):
    if forced:
        return 1.0 if label == LAMBERT else 0.0
    pt = ptrans[m] if transmission_on else 0.0
    if label == TRANSMIT:
        return pt
    s = smean[m]
    if label == LAMBERT:
        return (1.0 - pt) * s
    return (1.0 - pt) * (1.0 - s)


@njit(cache=True, nogil=True)
def dir_pdf(mat, label, m, n, prev, cur, nxt):
    """Solid-angle pdf of leaving ``cur`` towards ``nxt`` after arriving from ``prev``."""
    return _dir_pdf(mat[6][m], label, n[0], n[1], n[2], prev[0], prev[1], prev[2],
                    cur[0], cur[1], cur[2], nxt[0], nxt[1], nxt[2])


@njit(cache=True, nogil=True, inline="always")
def _dir_pdf(e, label, nx, ny, nz, ax, ay, az, bx, by, bz, cx, cy, cz):
    wx = cx - bx
    wy = cy - by
    wz = cz - bz
    inv = 1.0 / math.sqrt(wx * wx + wy * wy + wz * wz)
    wx *= inv
    wy *= inv
    wz *= inv
    if label == LAMBERT:
        return abs(wx * nx + wy * ny + wz * nz) / math.pi
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
    dx *= inv
    dy *= inv
    dz *= inv
    c = dx * nx + dy * ny + dz * nz
    rx = dx - 2.0 * c * nx
    ry = dy - 2.0 * c * ny
    rz = dz - 2.0 * c * nz
    ca = rx * wx + ry * wy + rz * wz
    # folded lobe: add the density of the mirror image below the surface
    cf = ca - 2.0 * (wx * nx + wy * ny + wz * nz) * (rx * nx + ry * ny + rz * nz)
    p = 0.0
    if ca > 0.0:
        p += math.pow(ca, e)
    if cf > 0.0:
        p += math.pow(cf, e)
    return (e + 1.0) / (2.0 * math.pi) * p


@njit(cache=True, nogil=True, inline="always")
def area_factor(normals, tri, a, b):
    """|cos at b| / |a - b|^2 (1/|a-b|^2 for non-surface vertices)."""
    return _area(normals, tri, a[0], a[1], a[2], b[0], b[1], b[2])


@njit(cache=True, nogil=True, inline="always")
def _area(normals, tri, ax, ay, az, bx, by, bz):
    dx = ax - bx
    dy = ay - by
    dz = az - bz
    d2 = dx * dx + dy * dy + dz * dz
    if tri < 0:
        return 1.0 / d2
    c = abs(dx * normals[tri, 0] + dy * normals[tri, 1] + dz * normals[tri, 2]) / math.sqrt(d2)
    return c / d2


@njit(cache=True, nogil=True)
def mis_weight(geom, mat, P, T, LB, base, k, e, n_src, n_lis, n_pool, max_src, max_lis, transmission_on):
    """Balance-heuristic weight of connection strategy ``e`` for a path of ``k`` bounces.

    ``P[i - base]``, ``T[i - base]``, ``LB[i - base]`` hold position, triangle
    (-1 for the source, listener and diffraction vertices) and label of path
    vertex i for i in [base, k + 1]; vertex 0 is the source and k + 1 the
    listener. Strategy j samples vertices 1..j from the source and j+1..k from
    the listener, joining them by a connection. It is usable when both
    connection endpoints are the source, the listener or Lambert vertices and
    the depth limits allow it. n_pool = 0 disables the middle strategies.
    """
    lo = max(0, k - max_lis)
    hi = min(k, max_src)
    if e < lo or e > hi or max(0, lo - 1) < base:
        return 0.0
    normals = geom[8]
    matidx = geom[10]
    smean = mat[4]
    ptrans = mat[5]
    phong = mat[6]
    total = 0.0
    ne = n_lis if e == 0 else (n_src if e == k else n_pool)
    # q_j = p_j / n_j relative to the chosen strategy
    q = 1.0
    for j in range(e + 1, hi + 1):
        # vertex j switches from listener-sampled to source-sampled
        pf = _pdf_fwd(normals, matidx, smean, ptrans, phong, P, T, LB, base, k, j, transmission_on)
        pr = _pdf_rev(normals, matidx, smean, ptrans, phong, P, T, LB, base, k, j, transmission_on)
        if pr <= 0.0:
            break
        q *= pf / pr
        if q == 0.0:
            break
        if _usable(LB, base, k, j):
            nj = n_lis if j == 0 else (n_src if j == k else n_pool)
            total += nj * q
    q = 1.0
    for j in range(e - 1, lo - 1, -1):
        # vertex j+1 switches from source-sampled to listener-sampled
        pf = _pdf_fwd(normals, matidx, smean, ptrans, phong, P, T, LB, base, k, j + 1, transmission_on)
        pr = _pdf_rev(normals, matidx, smean, ptrans, phong, P, T, LB, base, k, j + 1, transmission_on)
        if pf <= 0.0:
            break
        q *= pr / pf
        if q == 0.0:
            break
        if _usable(LB, base, k, j):
            nj = n_lis if j == 0 else (n_src if j == k else n_pool)
            total += nj * q
    return ne / (ne + total)


@njit(cache=True, nogil=True, inline="always")
def _usable(LB, base, k, j):
    if j > 0 and LB[j - base] != LAMBERT:
        return False
    if j < k and LB[j + 1 - base] != LAMBERT:
        return False
    return True


@njit(cache=True, nogil=True, inline="always")
def _delta(phong, matidx, label, tri):
    if label == LAMBERT:
        return False
    if label == LOBE:
        return phong[matidx[tri]] <= 0.0
    return True


@njit(cache=True, nogil=True, inline="always")
def _pdf_fwd(normals, matidx, smean, ptrans, phong, P, T, LB, base, k, j, transmission_on):
    """Area pdf of vertex j when sampled from vertex j-1 by the source side."""
    c = j - base
    tj = T[c]
    if j == 1:
        if tj < 0:
            return 1.0
        return INV_4PI * _area(normals, tj, P[c - 1, 0], P[c - 1, 1], P[c - 1, 2], P[c, 0], P[c, 1], P[c, 2])
    tp = T[c - 1]
    lp = LB[c - 1]
    if tp < 0 or tj < 0 or _delta(phong, matidx, lp, tp):
        return 1.0
    m = matidx[tp]
    pl = _label_prob(smean, ptrans, lp, m, transmission_on, False)
    pd = _dir_pdf(phong[m], lp, normals[tp, 0], normals[tp, 1], normals[tp, 2],
                  P[c - 2, 0], P[c - 2, 1], P[c - 2, 2], P[c - 1, 0], P[c - 1, 1], P[c - 1, 2],
                  P[c, 0], P[c, 1], P[c, 2])
    return pl * pd * _area(normals, tj, P[c - 1, 0], P[c - 1, 1], P[c - 1, 2], P[c, 0], P[c, 1], P[c, 2])


@njit(cache=True, nogil=True, inline="always")
def _pdf_rev(normals, matidx, smean, ptrans, phong, P, T, LB, base, k, j, transmission_on):
    """Area pdf of vertex j when sampled from vertex j+1 by the listener side."""
    c = j - base
    tj = T[c]
    if j == k:
        if tj < 0:
            return 1.0
        return INV_4PI * _area(normals, tj, P[c + 1, 0], P[c + 1, 1], P[c + 1, 2], P[c, 0], P[c, 1], P[c, 2])
    tn = T[c + 1]
    ln = LB[c + 1]
    if tn < 0 or tj < 0 or _delta(phong, matidx, ln, tn):
        return 1.0
    m = matidx[tn]
    pl = _label_prob(smean, ptrans, ln, m, transmission_on, j + 1 == k)
    pd = _dir_pdf(phong[m], ln, normals[tn, 0], normals[tn, 1], normals[tn, 2],
                  P[c + 2, 0], P[c + 2, 1], P[c + 2, 2], P[c + 1, 0], P[c + 1, 1], P[c + 1, 2],
                  P[c, 0], P[c, 1], P[c, 2])
    return pl * pd * _area(normals, tj, P[c + 1, 0], P[c + 1, 1], P[c + 1, 2], P[c, 0], P[c, 1], P[c, 2])


@njit(cache=True, nogil=True)
def capture_edge(edges, ox, oy, oz, dx, dy, dz, seg, path_len):
    """First diffraction edge passing within the capture radius of a segment.

    Returns (edge index or -1, distance along the segment, edge parameter, radius).
    """
    p0s = edges[0]
    p1s = edges[1]
    best = -1
    best_t = seg
    best_s = 0.0
    best_r = 0.0
    for i in range(p0s.shape[0]):
        dist, t, s = geo.segment_edge_distance(ox, oy, oz, dx, dy, dz, seg, p0s[i], p1s[i])
        rc = min(CAPTURE_MAX, max(0.01, CAPTURE_FRACTION * (path_len + t)))
        if dist < rc and t > 1e-6 and t < best_t:
            best = i
            best_t = t
            best_s = s
            best_r = rc
    return best, best_t, best_s, best_r


@njit(cache=True, nogil=True)
def diffract(edges, wavelengths, i, d, rc, captured, wout, weight):
    """Energy split at an edge capture.

    A fraction g_b = min(1, lambda_b / (2 pi r_c)) of each band bends onto
    the Keller cone (uniform over the air-side wedge); the rest continues
    straight. ``captured`` selects the branch; the weights keep the expected
    energy per band unchanged.
    """
    M = weight.shape[0]
    if not captured:
        for b in range(M):
            g = min(1.0, wavelengths[b] / (2.0 * math.pi * rc))
            weight[b] = (1.0 - g) / (1.0 - CAPTURE_PROB)
        wout[0] = d[0]
        wout[1] = d[1]
        wout[2] = d[2]
        return
    for b in range(M):
        g = min(1.0, wavelengths[b] / (2.0 * math.pi * rc))
        weight[b] = g / CAPTURE_PROB
    p0 = edges[0][i]
    p1 = edges[1][i]
    n1 = edges[2][i]
    n2 = edges[3][i]
    ex = p1[0] - p0[0]
    ey = p1[1] - p0[1]
    ez = p1[2] - p0[2]
    inv = 1.0 / math.sqrt(ex * ex + ey * ey + ez * ez)
    e = np.empty(3)
    e[0] = ex * inv
    e[1] = ey * inv
    e[2] = ez * inv
    cb = dot3(d, e)
    sb = math.sqrt(max(0.0, 1.0 - cb * cb))
    ux, uy, uz, vx, vy, vz = basis(e)
    for _ in range(64):
        phi = 2.0 * math.pi * np.random.random()
        px = math.cos(phi) * ux + math.sin(phi) * vx
        py = math.cos(phi) * uy + math.sin(phi) * vy
        pz = math.cos(phi) * uz + math.sin(phi) * vz
        # reject directions inside the solid part of the wedge
        if px * n1[0] + py * n1[1] + pz * n1[2] < 0.0 and px * n2[0] + py * n2[1] + pz * n2[2] < 0.0:
            continue
        break
    wout[0] = cb * e[0] + sb * px
    wout[1] = cb * e[1] + sb * py
    wout[2] = cb * e[2] + sb * pz
