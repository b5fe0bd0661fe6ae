"""Triangle meshes, BVH acceleration and diffraction edge extraction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _geometry as geo
from .errors import ConfigurationError, InvalidInputError, MeshFormatError
from .materials import AcousticMaterial, MaterialDatabase, MaterialTable, resolve_assignment

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-10
WEDGE_THRESHOLD = math.pi + 1e-3
WELD_TOLERANCE = 1e-6
PLANE_TOLERANCE = 1e-4


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    categories: Optional[tuple] = None
    dropped: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidInputError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("mesh has non-finite vertex coordinates")
        if self.categories is not None and len(self.categories) != len(t):
            raise InvalidInputError("category list length does not match triangle count")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(self.categories))

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        return self.vertices[self.triangles]

    def areas(self):
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def normals(self):
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def filter_degenerate(vertices, triangles, categories=None, min_area=DEGENERATE_AREA):
    """Drop zero-area triangles. Returns a TriangleMesh with ``dropped`` set."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    c = vertices[triangles]
    area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
    keep = area > min_area
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d degenerate triangle(s)", dropped)
    cats = None if categories is None else tuple(c for c, k in zip(categories, keep) if k)
    return TriangleMesh(vertices, triangles[keep], cats, dropped)


def _parse_obj(text):
    """Raw OBJ subset parse: ``v``, ``f`` (fan-triangulated) and ``usemtl``."""
    vertices = []
    triangles = []
    categories = []
    current = None
    any_usemtl = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshFormatError("vertex needs three coordinates", lineno)
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshFormatError(f"bad vertex coordinate in {raw.strip()!r}", lineno) from None
        elif tag == "f":
            if len(parts) < 4:
                raise MeshFormatError("face needs at least three vertices", lineno)
            idx = []
            for token in parts[1:]:
                head = token.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MeshFormatError(f"bad face index {token!r}", lineno) from None
                if i == 0:
                    raise MeshFormatError("face index 0 is invalid (OBJ is 1-based)", lineno)
                i = i - 1 if i > 0 else len(vertices) + i
                if not 0 <= i < len(vertices):
                    raise MeshFormatError(f"face index {token!r} out of range", lineno)
                idx.append(i)
            for k in range(1, len(idx) - 1):
                triangles.append((idx[0], idx[k], idx[k + 1]))
                categories.append(current)
        elif tag == "usemtl":
            current = parts[1] if len(parts) > 1 else None
            any_usemtl = True
        elif tag in ("vn", "vt", "vp", "g", "o", "s", "mtllib", "l", "p"):
            continue
        else:
            raise MeshFormatError(f"unsupported record {tag!r}", lineno)
    if not triangles:
        raise InvalidInputError("mesh contains no faces")
    return np.array(vertices, dtype=float), np.array(triangles), (categories if any_usemtl else None)


def parse_obj(text, unit_scale=1.0):
    """Parse OBJ text into a TriangleMesh with degenerate triangles removed."""
    v, t, cats = _parse_obj(text)
    return filter_degenerate(v * float(unit_scale), t, cats)


def load_mesh(path, unit_scale=1.0, category_file=None):
    """Load an OBJ mesh, scaling all coordinates by ``unit_scale``.

    ``category_file`` optionally gives one label per triangle after fan
    triangulation (newline-delimited) and overrides ``usemtl`` labels.
    """
    if not unit_scale > 0:
        raise InvalidInputError("unit_scale must be positive")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read mesh {path}: {exc}") from exc
    v, t, cats = _parse_obj(text)
    if category_file is not None:
        try:
            labels = Path(category_file).read_text().splitlines()
        except OSError as exc:
            raise ConfigurationError(f"cannot read category file {category_file}: {exc}") from exc
        labels = [s.strip() for s in labels]
        while labels and labels[-1] == "":
            labels.pop()
        if len(labels) != len(t):
            raise MeshFormatError(f"category file has {len(labels)} labels for {len(t)} triangles")
        cats = labels
    return filter_degenerate(v * float(unit_scale), t, cats)


def write_obj(mesh, path):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    current = None
    for i, (a, b, c) in enumerate(mesh.triangles):
        if mesh.categories is not None and mesh.categories[i] != current:
            current = mesh.categories[i]
            lines.append(f"usemtl {current}")
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def box_mesh(size, origin=(0.0, 0.0, 0.0), inward=True):
    """Axis-aligned box as 12 triangles labelled floor/ceiling/wall.

    Normals point inward (towards the air) for a room, outward for an object.
    """
    lx, ly, lz = (float(s) for s in size)
    if min(lx, ly, lz) <= 0:
        raise InvalidInputError("box dimensions must be positive")
    o = np.asarray(origin, dtype=float)
    v = o + np.array([[0, 0, 0], [lx, 0, 0], [lx, ly, 0], [0, ly, 0],
                      [0, 0, lz], [lx, 0, lz], [lx, ly, lz], [0, ly, lz]], dtype=float)
    # quads wound so normals point into the box
    quads = [((0, 1, 2, 3), "floor"), ((4, 7, 6, 5), "ceiling"),
             ((0, 4, 5, 1), "wall"), ((2, 6, 7, 3), "wall"),
             ((0, 3, 7, 4), "wall"), ((1, 5, 6, 2), "wall")]
    tris = []
    cats = []
    for (a, b, c, d), label in quads:
        tris += [(a, b, c), (a, c, d)]
        cats += [label, label]
    tris = np.array(tris)
    if not inward:
        tris = tris[:, ::-1]
    return TriangleMesh(v, tris, tuple(cats))


def merge_meshes(*meshes):
    verts = []
    tris = []
    cats = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        cats += list(m.categories) if m.categories is not None else [None] * m.n_triangles
        offset += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), tuple(cats))


class BVH(NamedTuple):
    bmin: np.ndarray
    bmax: np.ndarray
    child: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self):
        return len(self.count)


def build_bvh(vertices, triangles, leaf_size=4, n_bins=16):
    """Binned surface-area-heuristic BVH in depth-first layout.

    Inner nodes keep their left child at ``node + 1`` and the right child in
    ``child``; leaves have ``count > 0`` and reference ``order[start:start+count]``.
    """
    corners = vertices[triangles]
    tmin = corners.min(axis=1)
    tmax = corners.max(axis=1)
    cent = 0.5 * (tmin + tmax)
    n = len(triangles)
    span = np.ptp(vertices, axis=0).max() if n else 1.0
    pad = 1e-9 * max(span, 1.0)

    bmin, bmax, child, start, count = [], [], [], [], []
    order = []

    def area(lo, hi):
        d = np.maximum(hi - lo, 0.0)
        return 2.0 * (d[..., 0] * d[..., 1] + d[..., 1] * d[..., 2] + d[..., 2] * d[..., 0])

    def emit(idx):
        node = len(count)
        bmin.append(tmin[idx].min(axis=0) - pad)
        bmax.append(tmax[idx].max(axis=0) + pad)
        child.append(-1)
        start.append(0)
        count.append(0)
        split = None
        if len(idx) > leaf_size:
            split = best_split(idx)
        if split is None:
            start[node] = len(order)
            count[node] = len(idx)
            order.extend(idx.tolist())
            return node
        left, right = split
        emit(left)
        child[node] = emit(right)
        return node

    def best_split(idx):
        c = cent[idx]
        lo = c.min(axis=0)
        hi = c.max(axis=0)
        leaf_cost = len(idx) * area(tmin[idx].min(axis=0), tmax[idx].max(axis=0))
        best = (leaf_cost, None)
        for axis in range(3):
            if hi[axis] - lo[axis] <= 0:
                continue
            b = np.minimum(((c[:, axis] - lo[axis]) / (hi[axis] - lo[axis]) * n_bins).astype(int), n_bins - 1)
            cnt = np.bincount(b, minlength=n_bins)
            bl = np.full((n_bins, 3), np.inf)
            bh = np.full((n_bins, 3), -np.inf)
            np.minimum.at(bl, b, tmin[idx])
            np.maximum.at(bh, b, tmax[idx])
            for k in range(1, n_bins):
                nl = cnt[:k].sum()
                nr = len(idx) - nl
                if nl == 0 or nr == 0:
                    continue
                cost = (nl * area(bl[:k].min(axis=0), bh[:k].max(axis=0))
                        + nr * area(bl[k:].min(axis=0), bh[k:].max(axis=0)))
                if cost < best[0]:
                    best = (cost, (axis, k, b))
        if best[1] is None:
            if len(idx) > 4 * leaf_size:
                # no useful SAH split (e.g. identical centroids): median split
                axis = int(np.argmax(hi - lo))
                srt = idx[np.argsort(c[:, axis], kind="stable")]
                h = len(srt) // 2
                return srt[:h], srt[h:]
            return None
        axis, k, b = best[1]
        return idx[b < k], idx[b >= k]

    import sys
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10000))
    try:
        emit(np.arange(n))
    finally:
        sys.setrecursionlimit(limit)
    depth_bound = _max_depth(child, count)
    if depth_bound >= geo.STACK_SIZE:
        raise InvalidInputError("BVH too deep for the traversal stack")
    return BVH(np.array(bmin), np.array(bmax), np.array(child, dtype=np.int64),
               np.array(start, dtype=np.int64), np.array(count, dtype=np.int64),
               np.array(order, dtype=np.int64))


def _max_depth(child, count):
    depth = [0] * len(count)
    best = 0
    for node in range(len(count)):
        if count[node] == 0:
            depth[node + 1] = depth[node] + 1
            depth[child[node]] = depth[node] + 1
        best = max(best, depth[node])
    return best


class Hit(NamedTuple):
    triangle: int
    distance: float
    barycentric: tuple
    normal: np.ndarray


@dataclass(frozen=True)
class DiffractionEdge:
    p0: tuple
    p1: tuple
    n1: tuple
    n2: tuple
    wedge_angle: float

    @property
    def length(self):
        return float(np.linalg.norm(np.subtract(self.p1, self.p0)))


class EdgeList(list):
    """List of DiffractionEdge with extraction statistics."""

    skipped_nonmanifold = 0
    winding_flips = 0


def build_diffraction_edges(mesh, material_assignment=None):
    """Edges whose air-side wedge is convex (exterior angle > pi + 1e-3).

    Normals are taken to face the air. Boundary edges (one face) are free
    panel edges with a 2*pi wedge. Edges shared by more than two faces are
    skipped and counted. ``material_assignment`` is accepted for interface
    symmetry; the geometric criterion does not depend on it.
    """
    verts = mesh.vertices
    tris = mesh.triangles
    out = EdgeList()
    if len(tris) == 0:
        return out
    key = np.round(verts / WELD_TOLERANCE).astype(np.int64)
    _, weld = np.unique(key, axis=0, return_inverse=True)
    weld = weld.reshape(-1)
    wt = weld[tris]
    normals = mesh.normals()
    cent = mesh.corners().mean(axis=1)

    faces = {}
    for f in range(len(tris)):
        for k in range(3):
            a, b = int(wt[f, k]), int(wt[f, (k + 1) % 3])
            if a == b:
                continue
            faces.setdefault((min(a, b), max(a, b)), []).append((f, a < b, k))

    rep = np.zeros(weld.max() + 1, dtype=np.int64)
    rep[weld[::-1]] = np.arange(len(weld))[::-1]  # lowest original index per welded vertex
    flips = 0
    nonmanifold = 0
    for (a, b), adj in faces.items():
        p0 = verts[rep[a]]
        p1 = verts[rep[b]]
        if len(adj) == 1:
            n1 = normals[adj[0][0]]
            out.append(_edge(p0, p1, n1, -n1, 2.0 * math.pi))
            continue
        if len(adj) > 2:
            nonmanifold += 1
            continue
        (f1, d1, _), (f2, d2, _) = adj
        n1 = normals[f1]
        n2 = normals[f2]
        if d1 == d2:
            # both faces traverse the edge the same way: orientation disagrees
            flips += 1
            n2 = -n2
        cos = float(np.clip(np.dot(n1, n2), -1.0, 1.0))
        theta = math.acos(cos)
        behind = np.dot(n1, cent[f2] - p0) < 0.0
        wedge = math.pi + theta if behind else math.pi - theta
        if wedge > WEDGE_THRESHOLD:
            out.append(_edge(p0, p1, n1, n2, wedge))
    if flips:
        log.warning("inconsistent winding on %d edge(s); surfaces are treated as two-sided", flips)
    if nonmanifold:
        log.warning("skipped %d non-manifold edge(s)", nonmanifold)
    out.sort(key=lambda e: (e.p0, e.p1, e.n1, e.n2))
    out.skipped_nonmanifold = nonmanifold
    out.winding_flips = flips
    return out


def _edge(p0, p1, n1, n2, wedge):
    p0 = tuple(float(x) for x in p0)
    p1 = tuple(float(x) for x in p1)
    if p1 < p0:
        p0, p1 = p1, p0
    n1 = tuple(float(x) for x in n1)
    n2 = tuple(float(x) for x in n2)
    if n2 < n1:
        n1, n2 = n2, n1
    return DiffractionEdge(p0, p1, n1, n2, float(wedge))


def plane_ids(mesh):
    """Integer id per triangle shared by coplanar triangles (normal and offset within 1e-4)."""
    n = mesh.normals()
    d = np.einsum("ij,ij->i", n, mesh.corners()[:, 0])
    # canonical sign: first clearly non-zero normal component positive
    sign = np.ones(len(n))
    for i in range(len(n)):
        for c in range(3):
            if abs(n[i, c]) > 1e-6:
                sign[i] = 1.0 if n[i, c] > 0 else -1.0
                break
    key = np.column_stack([n * sign[:, None], d * sign])
    q = np.round(key / PLANE_TOLERANCE).astype(np.int64)
    _, ids = np.unique(q, axis=0, return_inverse=True)
    return ids.reshape(-1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Scene:
    mesh: TriangleMesh
    materials: MaterialTable
    bvh: BVH
    diffraction_edges: list
    speed_of_sound: float = 343.0
    normals: np.ndarray = field(default=None)
    planes: np.ndarray = field(default=None)

    @property
    def n_triangles(self):
        return self.mesh.n_triangles

    def bounds(self):
        return self.mesh.bounds()

    def contains(self, point, margin=0.0):
        lo, hi = self.bounds()
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= lo - margin) and np.all(p <= hi + margin))

    def edge_arrays(self):
        """Diffraction edges as (E, 2, 3) endpoints, (E, 2, 3) normals and (E,) wedge angles."""
        e = self.diffraction_edges
        if not e:
            return np.zeros((0, 2, 3)), np.zeros((0, 2, 3)), np.zeros(0)
        ends = np.array([[x.p0, x.p1] for x in e])
        norms = np.array([[x.n1, x.n2] for x in e])
        return ends, norms, np.array([x.wedge_angle for x in e])


def build_scene(mesh, material_assignment, speed_of_sound=343.0):
    """Resolve materials, build the BVH and extract diffraction edges.

    ``material_assignment`` may be a MaterialTable, a single AcousticMaterial
    applied everywhere, or a MaterialDatabase (fixed policy on the mesh's
    category labels).
    """
    if not speed_of_sound > 0:
        raise InvalidInputError("speed_of_sound must be positive")
    if mesh.n_triangles == 0:
        raise InvalidInputError("mesh has no triangles")
    if isinstance(material_assignment, AcousticMaterial):
        table = MaterialTable.single(material_assignment, mesh.n_triangles)
    elif isinstance(material_assignment, MaterialDatabase):
        cats = mesh.categories or (None,) * mesh.n_triangles
        table = resolve_assignment(material_assignment, cats)
    elif isinstance(material_assignment, MaterialTable):
        table = material_assignment
    else:
        raise ConfigurationError("unsupported material assignment")
    if len(table.indices) != mesh.n_triangles:
        raise ConfigurationError("material assignment does not cover every triangle")
    bvh = build_bvh(mesh.vertices, mesh.triangles)
    edges = build_diffraction_edges(mesh, table)
    normals = mesh.normals()
    normals.flags.writeable = False
    planes = plane_ids(mesh)
    planes.flags.writeable = False
    return Scene(mesh, table, bvh, edges, float(speed_of_sound), normals, planes)


def _bvh_args(scene):
    b = scene.bvh
    return (scene.mesh.vertices, scene.mesh.triangles, b.bmin, b.bmax, b.child, b.start, b.count, b.order)


def intersect(scene, origin, direction, max_distance=np.inf):
    """Nearest hit along a ray or None. ``direction`` must have unit norm."""
    d = np.asarray(direction, dtype=float)
    o = np.asarray(origin, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise InvalidInputError("ray direction must be normalised")
    tri, t, u, v = geo.closest_hit(*_bvh_args(scene), o[0], o[1], o[2], d[0], d[1], d[2],
                                   0.0, float(max_distance), -1)
    if tri < 0:
        return None
    return Hit(int(tri), float(t), (1.0 - u - v, u, v), scene.normals[tri].copy())


def intersect_many(scene, origins, directions, max_distance=np.inf):
    """Vectorised nearest hits: (triangle index or -1, distance or inf)."""
    o = np.ascontiguousarray(origins, dtype=float).reshape(-1, 3)
    d = np.ascontiguousarray(directions, dtype=float).reshape(-1, 3)
    tmax = np.broadcast_to(np.asarray(max_distance, dtype=float), (len(o),)).copy()
    tri, t, _ = geo.closest_hit_many(*_bvh_args(scene), o, d, tmax)
    return tri, t


def brute_force_intersect(mesh, origins, directions, max_distance=np.inf):
    o = np.ascontiguousarray(origins, dtype=float).reshape(-1, 3)
    d = np.ascontiguousarray(directions, dtype=float).reshape(-1, 3)
    tmax = np.broadcast_to(np.asarray(max_distance, dtype=float), (len(o),)).copy()
    return geo.brute_force_many(mesh.vertices, mesh.triangles, o, d, tmax)


def is_visible(scene, a, b):
    """Line-of-sight test between two points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v = b - a
    dist = float(np.linalg.norm(v))
    if dist == 0.0:
        return True
    v = v / dist
    return not geo.occluded(*_bvh_args(scene), a[0], a[1], a[2], v[0], v[1], v[2],
                            1e-9, dist - 1e-9, -1, -1)


def nearest_surface_distance(scene, point, n_dirs=256):
    """Approximate distance from ``point`` to the nearest surface (ray probe + vertex check)."""
    p = np.asarray(point, dtype=float)
    dirs = fibonacci_sphere(n_dirs)
    _, t = intersect_many(scene, np.broadcast_to(p, dirs.shape), dirs)
    best = float(t.min()) if len(t) else np.inf
    # exact point-to-triangle distance for the triangle-plane part
    c = scene.mesh.corners()
    n = scene.normals
    dist_plane = np.abs(np.einsum("ij,ij->i", n, p - c[:, 0]))
    proj = p - dist_plane[:, None] * np.sign(np.einsum("ij,ij->i", n, p - c[:, 0]))[:, None] * n
    inside = _point_in_triangles(proj, c)
    if inside.any():
        best = min(best, float(dist_plane[inside].min()))
    return best


def _point_in_triangles(p, c):
    v0 = c[:, 2] - c[:, 0]
    v1 = c[:, 1] - c[:, 0]
    v2 = p - c[:, 0]
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d02 = np.einsum("ij,ij->i", v0, v2)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d12 = np.einsum("ij,ij->i", v1, v2)
    den = d00 * d11 - d01 * d01
    u = (d11 * d02 - d01 * d12) / den
    v = (d00 * d12 - d01 * d02) / den
    return (u >= 0) & (v >= 0) & (u + v <= 1)


def fibonacci_sphere(n):
    """``n`` near-uniform unit vectors on the sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
