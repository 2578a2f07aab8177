"""Global degrees of freedom for the stress and displacement spaces.

Every stress function restricted to a triangle is ``sum_a phi_a C_a`` with
``phi_a`` the ten cubic nodal functions and ``C_a`` constant symmetric
matrices. A :class:`DofMap` stores the sparse matrix ``L`` that maps a global
coefficient vector to these local nodal matrices: row ``30*K + 3*a + j`` holds
component ``j`` of ``C_a`` on triangle ``K``. Assembly, interpolation,
prolongation and evaluation all go through ``L``.

Stress DOF order: vertex blocks, then four DOFs per edge, then nine bubble
DOFs per element. Vertex blocks hold

* 3 DOFs ``(s11, s12, s22)`` at ordinary vertices,
* 3 DOFs in the frame ``{n n^T, n t^T + t n^T, t t^T}`` of the boundary edge
  at traction-boundary vertices (the first two are then fixed by the data),
* 4 DOFs ``{n n^T, n t^T + t n^T, t t^T on the plus side, t t^T on the minus
  side}`` at split vertices,
* ``m + 2`` DOFs at a relaxed corner shared by ``m`` triangles.

Displacements are discontinuous quadratics, ``12*K + 2*b + c`` for node
``b`` and component ``c``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .corner import CornerError, fan_basis
from .mesh import INTERIOR_NEW, MINUS, PLUS, Mesh, MeshError
from .shapes import edge_frames, lagrange_p3, p3_node_barycentric, rot90, triangle_geometry

PLAIN, FRAME, SPLIT, CORNER = 0, 1, 2, 3
COLLINEAR_TOL = 1e-12


@dataclass(frozen=True)
class SpaceKind:
    """Which stress space to build.

    ``extended`` splits every interior new vertex; ``corners`` lists vertices
    to relax; ``manual_splits`` maps vertex ids to the tangent of a forced
    split (used for material interfaces).
    """

    extended: bool = False
    corners: tuple = ()
    manual_splits: tuple = ()

    @property
    def name(self):
        parts = []
        if self.extended:
            parts.append("extended")
        if self.manual_splits:
            parts.append("manual")
        if self.corners:
            parts.append("corner")
        return "+".join(parts) or "original"

    @classmethod
    def from_name(cls, name, corners=(), manual_splits=()):
        name = name.lower()
        if name == "original":
            return cls()
        if name == "extended":
            return cls(extended=True)
        if name == "corner-relaxed":
            return cls(corners=tuple(int(c) for c in corners))
        if name == "extended-manual":
            return cls(manual_splits=tuple((int(v), tuple(map(float, t))) for v, t in manual_splits))
        if name == "extended+corner":
            return cls(extended=True, corners=tuple(int(c) for c in corners))
        raise ValueError(f"unknown space kind {name!r}")


ORIGINAL = SpaceKind()
EXTENDED = SpaceKind(extended=True)


@dataclass
class SplitVertexRecord:
    vertex: int
    t: np.ndarray
    n: np.ndarray
    dofs: np.ndarray  # nn, nt + tn, tt plus, tt minus


@dataclass
class CornerRecord:
    vertex: int
    triangles: np.ndarray  # K_1 .. K_m
    edges: np.ndarray  # E_0 .. E_m
    values: np.ndarray  # (m + 2, m, 3)
    dofs: np.ndarray


@dataclass
class DofMap:
    mesh: Mesh
    kind: SpaceKind
    L: sp.csr_matrix
    vertex_offsets: np.ndarray
    vertex_type: np.ndarray
    vertex_frames: np.ndarray  # (nV, 2, 2): rows t, n for FRAME vertices
    edge_offset: int
    element_offset: int
    n_stress: int
    splits: dict = field(default_factory=dict)
    corners: dict = field(default_factory=dict)
    neumann_vertices: dict = field(default_factory=dict)  # vertex -> Neumann edge ids

    @property
    def n_disp(self):
        return 12 * self.mesh.n_triangles

    @property
    def n_total(self):
        return self.n_stress + self.n_disp

    def edge_dofs(self, e):
        return self.edge_offset + 4 * np.asarray(e)[..., None] + np.arange(4)

    def element_dofs(self, k):
        return self.element_offset + 9 * np.asarray(k)[..., None] + np.arange(9)

    def vertex_dofs(self, v):
        return np.arange(self.vertex_offsets[v], self.vertex_offsets[v + 1])

    def local(self, coeffs):
        """Per-element nodal matrices (nT, 10, 3)."""
        return (self.L @ coeffs).reshape(self.mesh.n_triangles, 10, 3)

    @property
    def constrained(self):
        """Stress DOFs fixed by traction data (sorted)."""
        out = []
        for v, edges in self.neumann_vertices.items():
            out.extend(_vertex_constrained(self, v))
        neu = np.nonzero(self.mesh.edge_markers < 0)[0]
        out.extend(self.edge_dofs(neu).ravel().tolist())
        return np.array(sorted(set(out)), dtype=np.int64)


def _vertex_constrained(dm, v):
    off = dm.vertex_offsets[v]
    typ = dm.vertex_type[v]
    if typ == FRAME:
        return [off, off + 1]
    if typ == PLAIN:
        return [off, off + 1, off + 2]
    if typ == CORNER:
        rec = dm.corners[v]
        markers = dm.mesh.edge_markers
        out = []
        if markers[rec.edges[0]] < 0:
            out += [off, off + 1]
        if markers[rec.edges[-1]] < 0:
            out += [off + 2, off + 3]
        return out
    raise MeshError(f"vertex {v} cannot carry traction constraints")


def _fan(mesh, v):
    """Triangles around a boundary vertex ordered from one boundary edge to
    the other, together with the edges E_0 .. E_m."""
    tris, _ = mesh.triangles_at(v)
    te = mesh.tri_edges
    edges_of = {}
    for k in tris:
        edges_of[int(k)] = [int(e) for e in te[k] if v in mesh.edges[e]]
    bnd = sorted({e for es in edges_of.values() for e in es if mesh.is_boundary_edge[e]})
    if len(bnd) != 2:
        raise CornerError(f"vertex {v} is not a boundary corner")
    e = bnd[0]
    order, edges = [], [e]
    k = int(mesh.edge_tris[e, 0])
    while True:
        order.append(k)
        e = [x for x in edges_of[k] if x != e][0]
        edges.append(e)
        if mesh.is_boundary_edge[e]:
            break
        a, b = mesh.edge_tris[e]
        k = int(b if a == k else a)
    return np.array(order), np.array(edges)


def build_dof_map(mesh: Mesh, kind: SpaceKind = ORIGINAL) -> DofMap:
    nV, nE, nT = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
    tri = mesh.triangles
    markers = mesh.edge_markers
    t_e = mesh.edge_tangents
    n_e = mesh.edge_normals

    # ---------------------------------------------------------- vertex types
    vtype = np.full(nV, PLAIN, dtype=np.int8)
    split_t = np.full((nV, 2), np.nan)
    if kind.extended:
        inew = mesh.interior_new_vertices()
        vtype[inew] = SPLIT
        split_t[inew] = mesh.origin_t[inew]
    for v, t in kind.manual_splits:
        t = np.asarray(t, dtype=float)
        vtype[v] = SPLIT
        split_t[v] = t / np.linalg.norm(t)

    neumann = {}
    for e in np.nonzero(markers < 0)[0]:
        for v in mesh.edges[e]:
            neumann.setdefault(int(v), []).append(int(e))
    neumann = {v: sorted(es) for v, es in sorted(neumann.items())}

    frames = np.full((nV, 2, 2), np.nan)
    for v, es in neumann.items():
        if vtype[v] == SPLIT:
            raise MeshError(f"split vertex {v} lies on the traction boundary")
        if v in kind.corners:
            continue
        t0 = t_e[es[0]]
        collinear = all(abs(t0[0] * t_e[e][1] - t0[1] * t_e[e][0]) <= COLLINEAR_TOL for e in es)
        if collinear:
            vtype[v] = FRAME
            frames[v, 0] = t0
            frames[v, 1] = n_e[es[0]]

    corner_fans = {}
    for v in kind.corners:
        v = int(v)
        if not mesh.boundary_vertex[v]:
            raise CornerError(f"corner {v} is not a boundary vertex")
        if vtype[v] == SPLIT:
            raise CornerError(f"corner {v} is also a split vertex")
        tris_v, edges_v = _fan(mesh, v)
        fr = [(t_e[e], n_e[e]) for e in edges_v]
        corner_fans[v] = (tris_v, edges_v, fan_basis(fr))
        vtype[v] = CORNER

    sizes = np.full(nV, 3, dtype=np.int64)
    sizes[vtype == SPLIT] = 4
    for v, (tris_v, _, _) in corner_fans.items():
        sizes[v] = len(tris_v) + 2
    voff = np.concatenate([[0], np.cumsum(sizes)])
    edge_offset = int(voff[-1])
    element_offset = edge_offset + 4 * nE
    n_stress = element_offset + 9 * nT

    rows, cols, vals = [], [], []

    def add(r, c, x):
        r, c, x = np.broadcast_arrays(np.asarray(r), np.asarray(c), np.asarray(x, dtype=float))
        keep = x != 0.0
        rows.append(r[keep].ravel())
        cols.append(c[keep].ravel())
        vals.append(x[keep].ravel())

    # --------------------------------------------------------- vertex blocks
    K = np.repeat(np.arange(nT), 3)
    a = np.tile(np.arange(3), nT)
    v_all = tri.ravel()
    base = 30 * K + 3 * a
    j = np.arange(3)

    sel = vtype[v_all] == PLAIN
    add(base[sel, None] + j, voff[v_all[sel], None] + j, 1.0)

    sel = vtype[v_all] == FRAME
    if sel.any():
        vv = v_all[sel]
        f = np.stack(edge_frames(frames[vv, 0], frames[vv, 1]), axis=-1)  # (n, 3 comp, 3 dof)
        add(base[sel, None, None] + j[:, None], voff[vv, None, None] + j[None, :], f)

    sel = vtype[v_all] == SPLIT
    splits = {}
    if sel.any():
        vv = v_all[sel]
        t = split_t[vv]
        n = rot90(t)
        d = np.einsum("ij,ij->i", mesh.centroids[K[sel]] - mesh.points[vv], n)
        scale = np.sqrt(mesh.areas[K[sel]])
        if np.any(np.abs(d) <= 1e-12 * scale):
            bad = int(vv[np.argmin(np.abs(d) / scale)])
            raise MeshError(f"a triangle straddles the split line at vertex {bad}")
        side = np.where(d > 0, PLUS, MINUS)
        nn, ns, tt = edge_frames(t, n)
        b = base[sel]
        o = voff[vv]
        add(b[:, None] + j, o[:, None], nn)
        add(b[:, None] + j, o[:, None] + 1, ns)
        add(b[:, None] + j, (o + np.where(side == PLUS, 2, 3))[:, None], tt)
        for v in np.unique(vv):
            tv = split_t[v]
            splits[int(v)] = SplitVertexRecord(int(v), tv, rot90(tv), np.arange(voff[v], voff[v] + 4))

    corners = {}
    for v, (tris_v, edges_v, values) in corner_fans.items():
        m = len(tris_v)
        for i, k in enumerate(tris_v):
            loc = int(np.nonzero(tri[k] == v)[0][0])
            add(30 * k + 3 * loc + j[None, :], voff[v] + np.arange(m + 2)[:, None], values[:, i, :])
        corners[v] = CornerRecord(v, tris_v, edges_v, values, np.arange(voff[v], voff[v + 1]))

    # ----------------------------------------------------------- edge blocks
    s1, s2, se = edge_frames(t_e, n_e)
    te = mesh.tri_edges
    for i in range(3):
        p, q = (i + 1) % 3, (i + 2) % 3
        e = te[:, i]
        forward = tri[:, p] < tri[:, q]
        for jj in range(2):
            slot = np.where(forward, jj, 1 - jj)
            node = 3 + 2 * i + jj
            r = 30 * np.arange(nT)[:, None] + 3 * node + j
            c0 = edge_offset + 4 * e + 2 * slot
            add(r, c0[:, None], s1[e])
            add(r, c0[:, None] + 1, s2[e])
            # tangential bubble alpha on this node
            add(r, (element_offset + 9 * np.arange(nT) + 2 * i + jj)[:, None], se[e])
    # interior bubbles theta_0j
    add(30 * np.arange(nT)[:, None] + 27 + j, element_offset + 9 * np.arange(nT)[:, None] + 6 + j, 1.0)

    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(30 * nT, n_stress))
    L.sum_duplicates()
    return DofMap(mesh, kind, L, voff, vtype, frames, edge_offset, element_offset, n_stress,
                  splits, corners, neumann)


# --------------------------------------------------------------------------
# evaluation

def _bary_in(coords, x):
    """Barycentric coordinates of points x (n, 2) in triangles coords (n, 3, 2)."""
    a = coords[:, 0]
    e1 = coords[:, 1] - a
    e2 = coords[:, 2] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    d = x - a
    l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def evaluate_local(local, tris, bary):
    """Evaluate nodal matrices ``local`` (nT, 10, 3) on triangles ``tris`` at
    barycentric points ``bary`` (one point per entry)."""
    phi, _, _ = lagrange_p3(bary)
    return np.einsum("pa,paj->pj", phi, local[tris])


def evaluate(dofmap: DofMap, coeffs, x, tris=None):
    """Stress values (npts, 3) at physical points ``x``.

    ``tris`` picks the triangle for each point (needed on element
    boundaries where the field is discontinuous); by default points are
    located in the mesh.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mesh = dofmap.mesh
    if tris is None:
        tris, bary = mesh.locate(x)
        if np.any(tris < 0):
            raise ValueError("point outside the mesh")
    else:
        tris = np.asarray(tris)
        bary = _bary_in(mesh.coords(tris), x)
    return evaluate_local(dofmap.local(coeffs), tris, bary)


def nodal_points(mesh):
    """Physical cubic Lagrange nodes (nT, 10, 2)."""
    return np.einsum("ai,kid->kad", p3_node_barycentric(), mesh.coords())


def _least_squares(dofmap, target):
    L = dofmap.L
    N = (L.T @ L).tocsc()
    x = splu(N).solve(L.T @ target)
    res = np.linalg.norm(L @ x - target) / max(np.linalg.norm(target), 1e-300)
    return x, res


def interpolate(dofmap: DofMap, sigma, tol=None):
    """Coefficients of the stress interpolant that matches ``sigma(x)``
    ((n, 2) -> (n, 3)) at the cubic nodes of every triangle, in the least
    squares sense when the nodal values are not representable."""
    X = nodal_points(dofmap.mesh).reshape(-1, 2)
    target = np.asarray(sigma(X), dtype=float).reshape(-1)
    x, res = _least_squares(dofmap, target)
    if tol is not None and res > tol:
        raise ValueError(f"field not in the discrete space (relative residual {res:.2e})")
    return x


def prolong(coarse: DofMap, coeffs, fine: DofMap, tol=1e-10):
    """Represent a coarse stress field in the space of a refined mesh.

    Fine nodal matrices are evaluated from the ancestor triangle; the fine
    coefficients follow by a least squares solve that is exact when the
    coarse function lies in the fine space. Raises ``ValueError`` otherwise.
    """
    anc = fine.mesh.ancestors_in(coarse.mesh)
    X = nodal_points(fine.mesh).reshape(-1, 2)
    tris = np.repeat(anc, 10)
    bary = _bary_in(coarse.mesh.coords(tris), X)
    target = evaluate_local(coarse.local(coeffs), tris, bary).reshape(-1)
    x, res = _least_squares(fine, target)
    if tol is not None and res > tol:
        raise ValueError(f"coarse field is not contained in the fine space (residual {res:.2e})")
    return x


def normal_jumps(dofmap: DofMap, coeffs=None, npts=4):
    """Jumps of sigma n_e across interior edges at Gauss points.

    With ``coeffs=None`` returns the sparse operator (2 * npts * nE_int rows)
    acting on coefficient vectors, otherwise its product with ``coeffs``.
    """
    from .quadrature import gauss_points

    mesh = dofmap.mesh
    interior = np.nonzero(~mesh.is_boundary_edge)[0]
    s = gauss_points(npts).points
    a = mesh.points[mesh.edges[interior, 0]]
    b = mesh.points[mesh.edges[interior, 1]]
    X = a[:, None] + s[None, :, None] * (b - a)[:, None]  # (ne, npts, 2)
    n = mesh.edge_normals[interior]
    blocks = []
    for slot, sign in ((0, 1.0), (1, -1.0)):
        k = np.repeat(mesh.edge_tris[interior, slot], npts)
        bary = _bary_in(mesh.coords(k), X.reshape(-1, 2))
        phi, _, _ = lagrange_p3(bary)
        nn = np.repeat(n, npts, axis=0)
        # (sigma n)_c = sum_a phi_a (C_a n)_c ; C_a n: comp0 = c0 n0 + c1 n1, comp1 = c1 n0 + c2 n1
        r = np.arange(len(k))
        rows, cols, vals = [], [], []
        for comp, coefs in ((0, (nn[:, 0], nn[:, 1], 0 * nn[:, 0])), (1, (0 * nn[:, 0], nn[:, 0], nn[:, 1]))):
            for aa in range(10):
                for jj in range(3):
                    w = sign * phi[:, aa] * coefs[jj]
                    rows.append(2 * r + comp)
                    cols.append(30 * k + 3 * aa + jj)
                    vals.append(w)
        blocks.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                    shape=(2 * len(k), 30 * mesh.n_triangles)))
    J = (blocks[0] + blocks[1]) @ dofmap.L
    return J if coeffs is None else J @ coeffs
