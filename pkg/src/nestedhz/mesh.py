"""Conforming triangulations refined by newest vertex bisection (NVB).

Triangles are stored as ``(v0, v1, v2)`` in counter-clockwise order where
``v0`` is the newest vertex and ``v1 v2`` is the refinement edge. Edges are
oriented from the smaller to the larger vertex id; ``t_e`` is the unit
tangent in that direction and ``n_e = (-t2, t1)``.

Boundary markers: ``0`` interior, positive ids Dirichlet segments, negative
ids Neumann segments.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

INITIAL, BOUNDARY_NEW, INTERIOR_NEW = 0, 1, 2
PLUS, MINUS = 1, -1


class MeshError(ValueError):
    pass


def _signed_area(p, tris):
    a, b, c = p[tris[:, 0]], p[tris[:, 1]], p[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _nvb_order(points, tris):
    """Rotate each triangle so that its longest edge is v1 v2.

    Ties go to the candidate whose opposite vertex has the lowest id.
    """
    tris = np.array(tris, dtype=np.int64)
    area = _signed_area(points, tris)
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    out = np.empty_like(tris)
    for k, t in enumerate(tris):
        best = None
        for r in range(3):
            v0, v1, v2 = t[r], t[(r + 1) % 3], t[(r + 2) % 3]
            length = np.sum((points[v1] - points[v2]) ** 2)
            key = (-length, v0)
            if best is None or key < best[0]:
                best = (key, (v0, v1, v2))
        out[k] = best[1]
    return out


def _edge_keys(a, b, n):
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return lo * n + hi


@dataclass(eq=False)
class Mesh:
    points: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    kind: Optional[np.ndarray] = None
    origin_t: Optional[np.ndarray] = None
    parent: Optional[np.ndarray] = None
    generation: Optional[np.ndarray] = None
    root: Optional[np.ndarray] = None
    previous: Optional["Mesh"] = field(default=None, repr=False)
    n_initial_vertices: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        be = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_edges = np.sort(be, axis=1)
        self.boundary_markers = np.asarray(self.boundary_markers, dtype=np.int64)
        nV, nT = len(self.points), len(self.triangles)
        if self.kind is None:
            self.kind = np.zeros(nV, dtype=np.int8)
        if self.origin_t is None:
            self.origin_t = np.full((nV, 2), np.nan)
        if self.parent is None:
            self.parent = np.full(nT, -1, dtype=np.int64)
        if self.generation is None:
            self.generation = np.zeros(nT, dtype=np.int64)
        if self.root is None:
            self.root = np.arange(nT, dtype=np.int64)
        if self.n_initial_vertices < 0:
            self.n_initial_vertices = int(np.sum(self.kind == INITIAL))
        for arr in (self.points, self.triangles, self.boundary_edges, self.boundary_markers,
                    self.kind, self.origin_t, self.parent, self.generation, self.root):
            arr.setflags(write=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def from_arrays(cls, points, triangles, segments, markers):
        """Initial mesh T0; triangles are reordered for NVB."""
        points = np.asarray(points, dtype=float)
        tris = _nvb_order(points, triangles)
        if np.any(_signed_area(points, tris) <= 0):
            raise MeshError("degenerate triangle in initial mesh")
        markers = np.asarray(markers, dtype=np.int64)
        if np.any(markers == 0):
            raise MeshError("boundary segments need a nonzero marker")
        mesh = cls(points, tris, segments, markers)
        bset = set(map(tuple, mesh.boundary_edges.tolist()))
        topo = set(map(tuple, mesh.edges[mesh.edge_tris[:, 1] < 0].tolist()))
        if bset != topo:
            raise MeshError("boundary segment table does not match the mesh boundary")
        return mesh

    # --------------------------------------------------------------- topology
    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        nV = self.n_vertices
        a = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        b = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
        keys = _edge_keys(a, b, nV)
        ukeys, inv = np.unique(keys, return_inverse=True)
        edges = np.column_stack([ukeys // nV, ukeys % nV])
        nT = len(t)
        tri_edges = inv.reshape(3, nT).T.copy()
        # a triangle traversing the edge from the higher to the lower id has
        # n_e pointing out of it; that triangle is K1
        out_of = (a > b).reshape(3, nT).T
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        counts = np.bincount(inv, minlength=len(edges))
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two triangles")
        loc = np.arange(3 * nT)
        tri_of = loc % nT
        le = loc // nT
        k1 = out_of[tri_of, le]
        edge_tris[inv[k1], 0] = tri_of[k1]
        edge_tris[inv[~k1], 1] = tri_of[~k1]
        # boundary edges: keep the single triangle in slot 0
        lone = edge_tris[:, 0] < 0
        edge_tris[lone, 0] = edge_tris[lone, 1]
        edge_tris[lone, 1] = -1
        for arr in (edges, tri_edges, edge_tris):
            arr.setflags(write=False)
        return edges, tri_edges, edge_tris

    @property
    def edges(self):
        return self._edge_data[0]

    @property
    def tri_edges(self):
        """(nT, 3): local edge i is opposite local vertex i."""
        return self._edge_data[1]

    @property
    def edge_tris(self):
        """(nE, 2): (K1, K2) with n_e pointing out of K1; K2 = -1 on the boundary."""
        return self._edge_data[2]

    @cached_property
    def edge_markers(self):
        keys = _edge_keys(self.edges[:, 0], self.edges[:, 1], self.n_vertices)
        bkeys = _edge_keys(self.boundary_edges[:, 0], self.boundary_edges[:, 1], self.n_vertices)
        out = np.zeros(self.n_edges, dtype=np.int64)
        pos = np.searchsorted(keys, bkeys)
        ok = (pos < len(keys)) & (keys[np.minimum(pos, len(keys) - 1)] == bkeys)
        out[pos[ok]] = self.boundary_markers[ok]
        out.setflags(write=False)
        return out

    @cached_property
    def edge_tangents(self):
        d = self.points[self.edges[:, 1]] - self.points[self.edges[:, 0]]
        t = d / np.linalg.norm(d, axis=1)[:, None]
        t.setflags(write=False)
        return t

    @property
    def edge_normals(self):
        t = self.edge_tangents
        return np.column_stack([-t[:, 1], t[:, 0]])

    @cached_property
    def edge_lengths(self):
        d = self.points[self.edges[:, 1]] - self.points[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    @cached_property
    def is_boundary_edge(self):
        return self.edge_tris[:, 1] < 0

    @cached_property
    def outward_sign(self):
        """+1 where n_e is the outward normal of a boundary edge, -1 where it
        points inward, 0 on interior edges."""
        s = np.zeros(self.n_edges)
        b = self.is_boundary_edge
        k = self.edge_tris[b, 0]
        e = np.nonzero(b)[0]
        # n_e points out of K iff K traverses the edge from higher to lower id
        te = self.tri_edges[k]
        loc = np.argmax(te == e[:, None], axis=1)
        tri = self.triangles[k]
        start = tri[np.arange(len(k)), (loc + 1) % 3]
        end = tri[np.arange(len(k)), (loc + 2) % 3]
        s[e] = np.where(start > end, 1.0, -1.0)
        return s

    @cached_property
    def boundary_vertex(self):
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.edges[self.is_boundary_edge].ravel()] = True
        return m

    @cached_property
    def areas(self):
        return _signed_area(self.points, self.triangles)

    @property
    def h(self):
        """Element sizes h_K = |K|^(1/2)."""
        return np.sqrt(self.areas)

    @cached_property
    def centroids(self):
        return self.points[self.triangles].mean(axis=1)

    @cached_property
    def vertex_triangles(self):
        """CSR-style (offsets, triangle ids, local index) incidence."""
        t = self.triangles.ravel()
        order = np.argsort(t, kind="stable")
        counts = np.bincount(t, minlength=self.n_vertices)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        tri_ids = order // 3
        local = order % 3
        return offsets, tri_ids, local

    def triangles_at(self, v):
        off, tri, loc = self.vertex_triangles
        return tri[off[v]:off[v + 1]], loc[off[v]:off[v + 1]]

    def coords(self, k=None):
        if k is None:
            return self.points[self.triangles]
        return self.points[self.triangles[k]]

    # ------------------------------------------------------------ predicates
    def is_conforming(self):
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)
        if np.any(counts > 2):
            return False
        lone = set(map(tuple, self.edges[counts == 1].tolist()))
        bset = set(map(tuple, self.boundary_edges.tolist()))
        return lone == bset

    def interior_new_vertices(self):
        return np.nonzero(self.kind == INTERIOR_NEW)[0]

    def min_angle(self):
        p = self.points[self.triangles]
        ang = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            w = p[:, (i + 2) % 3] - p[:, i]
            c = np.sum(u * w, 1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            ang.append(np.arccos(np.clip(c, -1, 1)))
        return float(np.min(ang))

    def ancestors_in(self, coarse: "Mesh"):
        """Index in ``coarse`` of the ancestor of every triangle of this mesh."""
        idx = np.arange(self.n_triangles)
        m = self
        while m is not coarse:
            if m.previous is None:
                raise MeshError("meshes are not nested")
            idx = m.parent[idx]
            m = m.previous
        return idx

    def locate(self, x, candidates=None):
        """Triangle index and barycentric coordinates of points ``x``.

        Points outside every triangle get index -1.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tri_idx = np.full(len(x), -1, dtype=np.int64)
        bary = np.zeros((len(x), 3))
        p = self.points[self.triangles]
        a = p[:, 0]
        e1 = p[:, 1] - a
        e2 = p[:, 2] - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        chunk = max(1, 2_000_000 // max(1, self.n_triangles))
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            d = xs[:, None, :] - a[None]
            l1 = (d[..., 0] * e2[None, :, 1] - d[..., 1] * e2[None, :, 0]) / det
            l2 = (e1[None, :, 0] * d[..., 1] - e1[None, :, 1] * d[..., 0]) / det
            l0 = 1 - l1 - l2
            score = np.minimum(np.minimum(l0, l1), l2)
            best = np.argmax(score, axis=1)
            r = np.arange(len(xs))
            ok = score[r, best] >= -1e-12
            tri_idx[s:s + chunk] = np.where(ok, best, -1)
            bary[s:s + chunk] = np.column_stack([l0[r, best], l1[r, best], l2[r, best]])
        return tri_idx, bary


# --------------------------------------------------------------------------
# refinement

def _split(mesh: Mesh, edge_mask, single_triangle=None):
    """Bisect every triangle whose refinement edge is marked, repeatedly,
    creating midpoints of the marked edges."""
    edges = mesh.edges
    marked = np.nonzero(edge_mask)[0]
    nV = mesh.n_vertices
    new_ids = nV + np.arange(len(marked))
    ea, eb = edges[marked, 0], edges[marked, 1]
    new_pts = (mesh.points[ea] + mesh.points[eb]) / 2.0
    t = mesh.edge_tangents[marked]
    is_bnd = mesh.is_boundary_edge[marked]
    kind = np.where(is_bnd, BOUNDARY_NEW, INTERIOR_NEW).astype(np.int8)

    big = nV + len(marked) + 1
    mkeys = _edge_keys(ea, eb, big)
    order = np.argsort(mkeys)
    mkeys = mkeys[order]
    mids = new_ids[order]

    tris = mesh.triangles.copy()
    parent = np.arange(mesh.n_triangles)
    gen = mesh.generation.copy()
    root = mesh.root.copy()
    active = np.ones(len(tris), dtype=bool)
    if single_triangle is not None:
        active[:] = False
        active[single_triangle] = True
    while True:
        keys = _edge_keys(tris[:, 1], tris[:, 2], big)
        pos = np.searchsorted(mkeys, keys)
        pos = np.minimum(pos, max(len(mkeys) - 1, 0))
        hit = (mkeys[pos] == keys) if len(mkeys) else np.zeros(len(keys), bool)
        if single_triangle is not None:
            hit &= active
        if not hit.any():
            break
        m = mids[pos[hit]]
        v0, v1, v2 = tris[hit, 0], tris[hit, 1], tris[hit, 2]
        c1 = np.column_stack([m, v0, v1])
        c2 = np.column_stack([m, v2, v0])
        reps = 1 + hit.astype(np.int64)
        src = np.repeat(np.arange(len(tris)), reps)
        new_tris = tris[src].copy()
        start = np.concatenate([[0], np.cumsum(reps)[:-1]])
        hs = start[hit]
        new_tris[hs] = c1
        new_tris[hs + 1] = c2
        new_gen = gen[src].copy()
        new_gen[hs] += 1
        new_gen[hs + 1] += 1
        new_active = active[src].copy()
        if single_triangle is not None:
            new_active[:] = False
        tris, parent, gen, root, active = new_tris, parent[src], new_gen, root[src], new_active

    # boundary table
    bkeys = _edge_keys(mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1], big)
    pos = np.searchsorted(mkeys, bkeys)
    pos = np.minimum(pos, max(len(mkeys) - 1, 0))
    bhit = (mkeys[pos] == bkeys) if len(mkeys) else np.zeros(len(bkeys), bool)
    keep = mesh.boundary_edges[~bhit]
    keep_m = mesh.boundary_markers[~bhit]
    sm = mids[pos[bhit]]
    sa, sb = mesh.boundary_edges[bhit, 0], mesh.boundary_edges[bhit, 1]
    new_b = np.concatenate([keep, np.column_stack([sa, sm]), np.column_stack([sm, sb])])
    new_bm = np.concatenate([keep_m, mesh.boundary_markers[bhit], mesh.boundary_markers[bhit]])
    new_b = np.sort(new_b, axis=1)
    border = np.lexsort((new_b[:, 1], new_b[:, 0]))

    return Mesh(
        points=np.concatenate([mesh.points, new_pts]),
        triangles=tris,
        boundary_edges=new_b[border],
        boundary_markers=new_bm[border],
        kind=np.concatenate([mesh.kind, kind]),
        origin_t=np.concatenate([mesh.origin_t, t]),
        parent=parent,
        generation=gen,
        root=root,
        previous=mesh,
        n_initial_vertices=mesh.n_initial_vertices,
    )


def bisect(mesh: Mesh, triangle: int) -> Mesh:
    """Bisect one triangle without completion.

    The result is nonconforming (``is_conforming() is False``) whenever the
    refinement edge is shared with a neighbour.
    """
    if not 0 <= triangle < mesh.n_triangles:
        raise IndexError(f"invalid triangle index {triangle}")
    mask = np.zeros(mesh.n_edges, dtype=bool)
    mask[mesh.tri_edges[triangle, 0]] = True
    return _split(mesh, mask, single_triangle=triangle)


def closure(mesh: Mesh, edge_mask):
    edge_mask = edge_mask.copy()
    te = mesh.tri_edges
    while True:
        need = edge_mask[te].any(axis=1) & ~edge_mask[te[:, 0]]
        if not need.any():
            return edge_mask
        edge_mask[te[need, 0]] = True


def refine(mesh: Mesh, marked) -> Mesh:
    """Bisect every marked triangle at least once and restore conformity."""
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_triangles:
        raise IndexError("marked triangle index out of range")
    mask = np.zeros(mesh.n_edges, dtype=bool)
    mask[mesh.tri_edges[marked, 0]] = True
    return _split(mesh, closure(mesh, mask))


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    """Split every edge once per step (two bisections per triangle), halving h."""
    for _ in range(times):
        mesh = _split(mesh, np.ones(mesh.n_edges, dtype=bool))
    return mesh


def side_of(mesh: Mesh, vertex: int, triangle: int, t=None) -> int:
    """PLUS or MINUS: the sign of (mid(K) - x_e) . n_e for the origin normal.

    ``t`` overrides the frozen tangent (used for manually split vertices).
    """
    if vertex not in mesh.triangles[triangle]:
        raise MeshError(f"vertex {vertex} is not a corner of triangle {triangle}")
    if t is None:
        if mesh.kind[vertex] == INITIAL:
            raise MeshError(f"vertex {vertex} has no origin edge")
        t = mesh.origin_t[vertex]
    n = np.array([-t[1], t[0]])
    s = float(np.dot(mesh.centroids[triangle] - mesh.points[vertex], n))
    scale = np.sqrt(abs(mesh.areas[triangle]))
    if abs(s) <= 1e-12 * scale:
        raise MeshError(f"triangle {triangle} straddles the split line at vertex {vertex}")
    return PLUS if s > 0 else MINUS


# --------------------------------------------------------------------------
# text format

def write_mesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        fh.write("mesh2d v1\n")
        fh.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.points:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"{mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"{len(mesh.boundary_edges)}\n")
        for (a, b), m in zip(mesh.boundary_edges, mesh.boundary_markers):
            fh.write(f"{a} {b} {m}\n")


def read_mesh(path) -> Mesh:
    """Read a ``mesh2d v1`` file. Triangles are taken in the stored NVB order."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "mesh2d v1":
        raise MeshError("not a mesh2d v1 file")
    i = 1
    nv = int(lines[i]); i += 1
    pts = np.array([[float(s) for s in lines[i + k].split()] for k in range(nv)])
    i += nv
    nt = int(lines[i]); i += 1
    tris = np.array([[int(s) for s in lines[i + k].split()] for k in range(nt)], dtype=np.int64)
    i += nt
    nb = int(lines[i]); i += 1
    seg = np.array([[int(s) for s in lines[i + k].split()] for k in range(nb)], dtype=np.int64)
    if np.any(_signed_area(pts, tris) <= 0):
        raise MeshError("triangles must be counter-clockwise")
    return Mesh(pts, tris, seg[:, :2], seg[:, 2])
