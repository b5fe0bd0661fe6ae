"""Numba tracing kernels.

Source paths are stored as ragged vertex arrays (one row per surface or edge
vertex). Contributions are written as records: unfolded path length, per-band
energy, arrival direction (listener frame is applied later), an
early-reflection flag and up to two reflecting plane ids.
"""

import math

import numpy as np
from numba import njit

from ._common import (CAPTURE_PROB, DEAD, DIFFRACT, EPS_OFFSET, INV_4PI, LAMBERT, LOBE, MIN_COS, TRANSMIT,
                      capture_edge, diffract, dot3, hit, is_delta, mis_weight, sample_sphere,
                      scatter, visible)


@njit(cache=True, nogil=True)
def _attenuate(thr, air_k, damp_k, med, dist):
    for b in range(thr.shape[0]):
        k = air_k[b]
        if med >= 0:
            k += damp_k[med, b]
        thr[b] *= math.exp(-k * dist)


@njit(cache=True, nogil=True)
def trace_source_batch(geom, mat, edges, wavelengths, air_k, src, n_rays, depth, seed,
                       cutoff, transmission_on, diffraction_on):
    """Trace ``n_rays`` source paths of at most ``depth`` vertices.

    Returns the vertex arrays and ``path_start`` offsets (length n_rays + 1).
    """
    np.random.seed(seed)
    normals = geom[8]
    matidx = geom[10]
    damp_k = mat[3]
    M = air_k.shape[0]
    cap = n_rays * depth
    pos = np.empty((cap, 3))
    thr_in = np.empty((cap, M))
    thr_out = np.empty((cap, M))
    length = np.empty(cap)
    tri_v = np.empty(cap, dtype=np.int64)
    lab = np.empty(cap, dtype=np.int8)
    wout = np.empty((cap, 3))
    seg = np.empty(cap)
    anchor = np.empty(cap)
    med_in = np.empty(cap, dtype=np.int64)
    med_out = np.empty(cap, dtype=np.int64)
    vdepth = np.empty(cap, dtype=np.int64)
    path_start = np.zeros(n_rays + 1, dtype=np.int64)
    has_edges = diffraction_on and edges[0].shape[0] > 0

    d = np.empty(3)
    nd = np.empty(3)
    w = np.empty(M)
    thr = np.empty(M)
    n = np.empty(3)
    nv = 0
    for r in range(n_rays):
        path_start[r] = nv
        sample_sphere(d)
        ox, oy, oz = src[0], src[1], src[2]
        for b in range(M):
            thr[b] = 1.0
        plen = 0.0
        anc = 0.0
        med = -1
        skip = -1
        prev = -1
        j = 0
        while True:
            tri, t, u, v = hit(geom, ox, oy, oz, d[0], d[1], d[2], np.inf, skip)
            edge = -1
            if has_edges:
                reach = t if tri >= 0 else 1e4
                edge, te, se, rc = capture_edge(edges, ox, oy, oz, d[0], d[1], d[2], reach, plen)
                if edge >= 0:
                    t = te
                    tri = -1
            if prev >= 0:
                seg[prev] = t if (tri >= 0 or edge >= 0) else np.inf
            if j >= depth or (tri < 0 and edge < 0):
                break
            plen += t
            _attenuate(thr, air_k, damp_k, med, t)
            px = ox + d[0] * t
            py = oy + d[1] * t
            pz = oz + d[2] * t
            i = nv
            nv += 1
            pos[i, 0] = px
            pos[i, 1] = py
            pos[i, 2] = pz
            thr_in[i] = thr
            length[i] = plen
            tri_v[i] = tri
            med_in[i] = med
            vdepth[i] = j + 1
            seg[i] = np.inf
            anc_here = anc + t
            if edge >= 0:
                captured = np.random.random() < CAPTURE_PROB
                diffract(edges, wavelengths, edge, d, rc, captured, nd, w)
                label = DIFFRACT
                anc = 0.0 if captured else anc_here
                ox, oy, oz = px, py, pz
                skip = -1
            else:
                n[0] = normals[tri, 0]
                n[1] = normals[tri, 1]
                n[2] = normals[tri, 2]
                m = matidx[tri]
                label = scatter(mat, m, d, n, transmission_on, False, nd, w)
                side = 1.0 if dot3(d, n) < 0.0 else -1.0
                if label == TRANSMIT:
                    side = -side
                    med = m if med < 0 else -1
                ox = px + side * n[0] * EPS_OFFSET
                oy = py + side * n[1] * EPS_OFFSET
                oz = pz + side * n[2] * EPS_OFFSET
                skip = tri
                anc = anc_here if (label != DEAD and is_delta(mat, label, tri, matidx)) else 0.0
            if label != DEAD:
                mx = 0.0
                for b in range(M):
                    thr[b] *= w[b]
                    mx = max(mx, thr[b])
                if mx < cutoff:
                    q = mx / cutoff
                    if np.random.random() >= q:
                        label = DEAD
                    else:
                        for b in range(M):
                            thr[b] /= q
            lab[i] = label
            med_out[i] = med
            anchor[i] = anc
            thr_out[i] = thr
            wout[i, 0] = nd[0]
            wout[i, 1] = nd[1]
            wout[i, 2] = nd[2]
            if label == DEAD:
                break
            d[0] = nd[0]
            d[1] = nd[1]
            d[2] = nd[2]
            prev = i
            j += 1
    path_start[n_rays] = nv
    return (pos[:nv].copy(), thr_in[:nv].copy(), thr_out[:nv].copy(), length[:nv].copy(),
            tri_v[:nv].copy(), lab[:nv].copy(), wout[:nv].copy(), seg[:nv].copy(),
            anchor[:nv].copy(), med_in[:nv].copy(), med_out[:nv].copy(), vdepth[:nv].copy(),
            path_start)


@njit(cache=True, nogil=True)
def _path_window(P, T, LB, base, k, src, lis, spos, stri, slab, sstart, e, ypos, ytri, ylab, t_lis):
    """Fill path vertex arrays for indices base..k+1.

    Vertices 1..e come from a stored source path starting at ``sstart``;
    vertices e+1..k from a listener path (z_j = y_{k-j+1}).
    """
    for j in range(base, k + 2):
        q = j - base
        if j == 0:
            P[q, 0] = src[0]
            P[q, 1] = src[1]
            P[q, 2] = src[2]
            T[q] = -1
            LB[q] = LAMBERT
        elif j == k + 1:
            P[q, 0] = lis[0]
            P[q, 1] = lis[1]
            P[q, 2] = lis[2]
            T[q] = -1
            LB[q] = LAMBERT
        elif j <= e:
            s = sstart + j - 1
            P[q] = spos[s]
            T[q] = stri[s]
            LB[q] = slab[s]
        else:
            y = k - j  # 0-based listener vertex index
            P[q] = ypos[y]
            T[q] = ytri[y]
            LB[q] = ylab[y]
    # connection endpoints are evaluated with their Lambert component
    if e >= 1:
        LB[e - base] = LAMBERT
    if e + 1 <= k:
        LB[e + 1 - base] = LAMBERT


@njit(cache=True, nogil=True)
def _lambert_side_ok(normal, incoming, to_target):
    """Target must lie on the side the path arrived from."""
    return dot3(normal, incoming) * dot3(normal, to_target) < 0.0


@njit(cache=True, nogil=True)
def source_side_records(geom, mat, air_k, src, lis, radius, verts, n_src, n_lis, n_pool,
                        max_src, max_lis, transmission_on, light_tracing):
    """Listener-sphere hits and light-tracing connections for a batch of source paths."""
    pos, thr_in, thr_out, length, tri_v, lab, wout, seg, anchor, med_in, med_out, vdepth, path_start = verts
    normals = geom[8]
    matidx = geom[10]
    planes = geom[9]
    refl, scat, damp_k = mat[0], mat[2], mat[3]
    M = air_k.shape[0]
    nv = pos.shape[0]
    cap = 2 * nv + 1
    r_len = np.empty(cap)
    r_e = np.empty((cap, M))
    r_dir = np.empty((cap, 3))
    r_er = np.zeros(cap, dtype=np.int8)
    r_pl = np.full((cap, 2), -1, dtype=np.int64)
    nr = 0
    R2 = radius * radius
    n_paths = path_start.shape[0] - 1
    P = np.empty((max_lis + 3, 3))
    T = np.empty(max_lis + 3, dtype=np.int64)
    LB = np.empty(max_lis + 3, dtype=np.int8)
    dummy_p = np.empty((1, 3))
    dummy_i = np.empty(1, dtype=np.int64)
    dummy_l = np.empty(1, dtype=np.int8)
    thr = np.empty(M)
    for p in range(n_paths):
        s0 = path_start[p]
        s1 = path_start[p + 1]
        for i in range(s0, s1):
            k = vdepth[i]
            label = lab[i]
            # sphere estimator: the vertex next to the listener is not Lambert
            if label == LOBE or label == TRANSMIT or label == DIFFRACT:
                lx = lis[0] - pos[i, 0]
                ly = lis[1] - pos[i, 1]
                lz = lis[2] - pos[i, 2]
                tc = lx * wout[i, 0] + ly * wout[i, 1] + lz * wout[i, 2]
                if tc >= 0.0 and tc < seg[i]:
                    rho2 = lx * lx + ly * ly + lz * lz - tc * tc
                    if rho2 < R2:
                        A = anchor[i] + tc
                        D2 = A * A + max(rho2, 0.0)
                        D = math.sqrt(D2)
                        if D > radius:
                            omega = 2.0 * math.pi * (1.0 - math.sqrt(1.0 - R2 / D2))
                            for b in range(M):
                                thr[b] = thr_out[i, b]
                            _attenuate(thr, air_k, damp_k, med_out[i], tc)
                            scale = 1.0 / (n_src * omega * D2)
                            for b in range(M):
                                r_e[nr, b] = thr[b] * scale
                            r_len[nr] = length[i] - anchor[i] + D
                            # from the listener towards the (virtual) emitter
                            rx = -lx + wout[i, 0] * tc - wout[i, 0] * A
                            ry = -ly + wout[i, 1] * tc - wout[i, 1] * A
                            rz = -lz + wout[i, 2] * tc - wout[i, 2] * A
                            inv = 1.0 / math.sqrt(rx * rx + ry * ry + rz * rz)
                            r_dir[nr, 0] = rx * inv
                            r_dir[nr, 1] = ry * inv
                            r_dir[nr, 2] = rz * inv
                            if k <= 2:
                                er = True
                                for q in range(s0, i + 1):
                                    if lab[q] != LOBE:
                                        er = False
                                if er:
                                    r_er[nr] = 1
                                    for q in range(s0, i + 1):
                                        r_pl[nr, q - s0] = planes[tri_v[q]]
                            nr += 1
            # light tracing: connect this vertex to the listener
            tri = tri_v[i]
            if not light_tracing or tri < 0 or k > max_src:
                continue
            m = matidx[tri]
            lx = lis[0] - pos[i, 0]
            ly = lis[1] - pos[i, 1]
            lz = lis[2] - pos[i, 2]
            dist2 = lx * lx + ly * ly + lz * lz
            dist = math.sqrt(dist2)
            if i == s0:
                ix = pos[i, 0] - src[0]
                iy = pos[i, 1] - src[1]
                iz = pos[i, 2] - src[2]
            else:
                ix = pos[i, 0] - pos[i - 1, 0]
                iy = pos[i, 1] - pos[i - 1, 1]
                iz = pos[i, 2] - pos[i - 1, 2]
            nx, ny, nz = normals[tri, 0], normals[tri, 1], normals[tri, 2]
            if (nx * ix + ny * iy + nz * iz) * (nx * lx + ny * ly + nz * lz) >= 0.0:
                continue
            if abs(nx * lx + ny * ly + nz * lz) <= MIN_COS * dist:
                continue
            if not visible(geom, pos[i], lis, tri, -1):
                continue
            cosl = abs(nx * lx + ny * ly + nz * lz) / dist
            lo = max(0, k - max_lis)
            base = max(0, lo - 1)
            _path_window(P, T, LB, base, k, src, lis, pos, tri_v, lab, s0, k,
                         dummy_p, dummy_i, dummy_l, 0)
            wgt = mis_weight(geom, mat, P, T, LB, base, k, k, n_src, n_lis, n_pool,
                             max_src, max_lis, transmission_on)
            if wgt <= 0.0:
                continue
            for b in range(M):
                thr[b] = thr_in[i, b]
            _attenuate(thr, air_k, damp_k, med_in[i], dist)
            g = wgt * cosl / dist2 / math.pi / n_src
            for b in range(M):
                r_e[nr, b] = thr[b] * scat[m, b] * refl[m, b] * g
            r_len[nr] = length[i] + dist
            r_dir[nr, 0] = -lx / dist
            r_dir[nr, 1] = -ly / dist
            r_dir[nr, 2] = -lz / dist
            nr += 1
    return r_len[:nr].copy(), r_e[:nr].copy(), r_dir[:nr].copy(), r_er[:nr].copy(), r_pl[:nr].copy()


@njit(cache=True, nogil=True)
def trace_listener_batch(geom, mat, edges, wavelengths, air_k, src, lis, n_rays, depth, seed, cutoff,
                         transmission_on, diffraction_on, pool, pool_start, n_pool_paths,
                         n_src, n_lis, max_src, use_nee):
    """Listener paths with next-event connections to the source and to a pool vertex."""
    np.random.seed(seed)
    normals = geom[8]
    matidx = geom[10]
    refl, scat, damp_k = mat[0], mat[2], mat[3]
    ppos, pthr, plength, ptri, plab, pmed, pdepth = pool
    m_pool = ppos.shape[0]
    n_pool = n_lis * n_pool_paths / m_pool if m_pool > 0 else 0.0
    M = air_k.shape[0]
    cap = 2 * n_rays * depth + 1
    r_len = np.empty(cap)
    r_e = np.empty((cap, M))
    r_dir = np.empty((cap, 3))
    r_er = np.zeros(cap, dtype=np.int8)
    r_pl = np.full((cap, 2), -1, dtype=np.int64)
    nr = 0
    has_edges = diffraction_on and edges[0].shape[0] > 0
    max_lis = depth
    ypos = np.empty((depth, 3))
    ytri = np.empty(depth, dtype=np.int64)
    ylab = np.empty(depth, dtype=np.int8)
    ylen = np.empty(depth)
    kmax = max_src + depth + 3
    P = np.empty((kmax, 3))
    T = np.empty(kmax, dtype=np.int64)
    LB = np.empty(kmax, dtype=np.int8)
    d = np.empty(3)
    d0 = np.empty(3)
    nd = np.empty(3)
    w = np.empty(M)
    thr = np.empty(M)
    e_b = np.empty(M)
    n = np.empty(3)
    four_pi = 4.0 * math.pi
    for r in range(n_rays):
        sample_sphere(d)
        d0[0] = d[0]
        d0[1] = d[1]
        d0[2] = d[2]
        ox, oy, oz = lis[0], lis[1], lis[2]
        for b in range(M):
            thr[b] = four_pi
        plen = 0.0
        med = -1
        skip = -1
        t_i = 0
        while t_i < depth:
            tri, t, u, v = hit(geom, ox, oy, oz, d[0], d[1], d[2], np.inf, skip)
            edge = -1
            if has_edges:
                reach = t if tri >= 0 else 1e4
                edge, te, se, rc = capture_edge(edges, ox, oy, oz, d[0], d[1], d[2], reach, plen)
                if edge >= 0:
                    t = te
                    tri = -1
            if tri < 0 and edge < 0:
                break
            plen += t
            _attenuate(thr, air_k, damp_k, med, t)
            px = ox + d[0] * t
            py = oy + d[1] * t
            pz = oz + d[2] * t
            y = t_i
            t_i += 1
            ypos[y, 0] = px
            ypos[y, 1] = py
            ypos[y, 2] = pz
            ytri[y] = tri
            ylen[y] = plen
            if edge >= 0:
                captured = np.random.random() < CAPTURE_PROB
                diffract(edges, wavelengths, edge, d, rc, captured, nd, w)
                ylab[y] = DIFFRACT
                ox, oy, oz = px, py, pz
                skip = -1
            else:
                n[0] = normals[tri, 0]
                n[1] = normals[tri, 1]
                n[2] = normals[tri, 2]
                m = matidx[tri]
                k = t_i
                # next-event connection to the source
                if use_nee:
                    sx = src[0] - px
                    sy = src[1] - py
                    sz = src[2] - pz
                    dist2 = sx * sx + sy * sy + sz * sz
                    dist = math.sqrt(dist2)
                    ns = n[0] * sx + n[1] * sy + n[2] * sz
                    if dot3(n, d) * ns < 0.0 and abs(ns) > MIN_COS * dist and \
                            visible(geom, ypos[y], src, tri, -1):
                        ylab[y] = LAMBERT
                        _path_window(P, T, LB, 0, k, src, lis, ypos, ytri, ylab, 0, 0,
                                     ypos, ytri, ylab, t_i)
                        wgt = mis_weight(geom, mat, P, T, LB, 0, k, 0, n_src, n_lis, n_pool,
                                         max_src, max_lis, transmission_on)
                        if wgt > 0.0:
                            cosy = abs(n[0] * sx + n[1] * sy + n[2] * sz) / dist
                            for b in range(M):
                                e_b[b] = thr[b]
                            _attenuate(e_b, air_k, damp_k, med, dist)
                            g = wgt * cosy / dist2 / math.pi * INV_4PI / n_lis
                            for b in range(M):
                                r_e[nr, b] = e_b[b] * scat[m, b] * refl[m, b] * g
                            r_len[nr] = plen + dist
                            r_dir[nr, 0] = d0[0]
                            r_dir[nr, 1] = d0[1]
                            r_dir[nr, 2] = d0[2]
                            nr += 1
                # connection to a random stored source vertex
                if m_pool > 0:
                    v_i = min(int(np.random.random() * m_pool), m_pool - 1)
                    vt = ptri[v_i]
                    e = pdepth[v_i]
                    kk = e + t_i
                    if vt >= 0 and kk - e <= max_lis:
                        cx = ppos[v_i, 0] - px
                        cy = ppos[v_i, 1] - py
                        cz = ppos[v_i, 2] - pz
                        dist2 = cx * cx + cy * cy + cz * cz
                        dist = math.sqrt(dist2)
                        s_start = pool_start[v_i]
                        if e == 1:
                            ix = ppos[v_i, 0] - src[0]
                            iy = ppos[v_i, 1] - src[1]
                            iz = ppos[v_i, 2] - src[2]
                        else:
                            ix = ppos[v_i, 0] - ppos[v_i - 1, 0]
                            iy = ppos[v_i, 1] - ppos[v_i - 1, 1]
                            iz = ppos[v_i, 2] - ppos[v_i - 1, 2]
                        vn0, vn1, vn2 = normals[vt, 0], normals[vt, 1], normals[vt, 2]
                        ok_v = (vn0 * ix + vn1 * iy + vn2 * iz) * (-(vn0 * cx + vn1 * cy + vn2 * cz)) < 0.0
                        ok_y = dot3(n, d) * (n[0] * cx + n[1] * cy + n[2] * cz) < 0.0
                        grazing = (abs(vn0 * cx + vn1 * cy + vn2 * cz) <= MIN_COS * dist
                                   or abs(n[0] * cx + n[1] * cy + n[2] * cz) <= MIN_COS * dist)
                        if dist > 0.0 and ok_v and ok_y and not grazing and visible(geom, ypos[y], ppos[v_i], tri, vt):
                            ylab[y] = LAMBERT
                            lo = max(0, kk - max_lis)
                            base = max(0, lo - 1)
                            _path_window(P, T, LB, base, kk, src, lis, ppos, ptri, plab, s_start, e,
                                         ypos, ytri, ylab, t_i)
                            wgt = mis_weight(geom, mat, P, T, LB, base, kk, e, n_src, n_lis, n_pool,
                                             max_src, max_lis, transmission_on)
                            if wgt > 0.0:
                                mv = matidx[vt]
                                cosv = abs(vn0 * cx + vn1 * cy + vn2 * cz) / dist
                                cosy = abs(n[0] * cx + n[1] * cy + n[2] * cz) / dist
                                for b in range(M):
                                    e_b[b] = thr[b]
                                _attenuate(e_b, air_k, damp_k, pmed[v_i], dist)
                                g = wgt * cosv * cosy / dist2 / (math.pi * math.pi) * m_pool / n_pool_paths / n_lis
                                for b in range(M):
                                    r_e[nr, b] = (e_b[b] * pthr[v_i, b] * scat[mv, b] * refl[mv, b]
                                                  * scat[m, b] * refl[m, b] * g)
                                r_len[nr] = plen + dist + plength[v_i]
                                r_dir[nr, 0] = d0[0]
                                r_dir[nr, 1] = d0[1]
                                r_dir[nr, 2] = d0[2]
                                nr += 1
                label = scatter(mat, m, d, n, transmission_on, t_i == 1, nd, w)
                ylab[y] = label
                if label == DEAD:
                    break
                side = 1.0 if dot3(d, n) < 0.0 else -1.0
                if label == TRANSMIT:
                    side = -side
                    med = m if med < 0 else -1
                ox = px + side * n[0] * EPS_OFFSET
                oy = py + side * n[1] * EPS_OFFSET
                oz = pz + side * n[2] * EPS_OFFSET
                skip = tri
            mx = 0.0
            for b in range(M):
                thr[b] *= w[b]
                mx = max(mx, thr[b] / four_pi)
            if mx < cutoff:
                q = mx / cutoff
                if np.random.random() >= q:
                    break
                for b in range(M):
                    thr[b] /= q
            d[0] = nd[0]
            d[1] = nd[1]
            d[2] = nd[2]
    return r_len[:nr].copy(), r_e[:nr].copy(), r_dir[:nr].copy(), r_er[:nr].copy(), r_pl[:nr].copy()
