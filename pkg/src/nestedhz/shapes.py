"""Local shape functions on a triangle.

Every stress shape is a scalar cubic Lagrange nodal function times a constant
symmetric matrix, so the whole element is described by ten nodal functions and
a 3x3 "frame" per node. Symmetric matrices are stored as vectors
``(s11, s12, s22)``; the canonical basis is

    S1 = [[1, 0], [0, 0]],  S2 = [[0, 1], [1, 0]],  S3 = [[0, 0], [0, 1]].

Local node numbering (the reference ordering used everywhere else):

    0, 1, 2      vertices
    3 + 2*i + j  edge nodes of local edge i (opposite vertex i), j = 0 near
                 vertex (i+1) % 3 and j = 1 near vertex (i+2) % 3
    9            interior node
"""
from dataclasses import dataclass

import numpy as np

N_P3 = 10
N_P2 = 6

# vec(S) : vec(T) == S : T for symmetric matrices stored as (s11, s12, s22)
FROBENIUS_WEIGHTS = np.array([1.0, 2.0, 1.0])
TRACE_VEC = np.array([1.0, 0.0, 1.0])


def _edge_pairs():
    pairs = []
    for i in range(3):
        p, q = (i + 1) % 3, (i + 2) % 3
        pairs.append((p, q))
        pairs.append((q, p))
    return pairs


# (near, far) barycentric indices of the six edge nodes
EDGE_NODE_PAIRS = tuple(_edge_pairs())


def p3_node_barycentric() -> np.ndarray:
    """Barycentric coordinates of the ten cubic Lagrange nodes."""
    nodes = np.zeros((N_P3, 3))
    nodes[:3] = np.eye(3)
    for k, (p, q) in enumerate(EDGE_NODE_PAIRS):
        nodes[3 + k, p] = 2.0 / 3.0
        nodes[3 + k, q] = 1.0 / 3.0
    nodes[9] = 1.0 / 3.0
    return nodes


def lagrange_p3(bary):
    """Values, barycentric gradients and barycentric Hessians of the cubic
    Lagrange nodal basis.

    Returns arrays of shape (npts, 10), (npts, 10, 3) and (npts, 10, 3, 3).
    Derivatives treat the three barycentric coordinates as independent
    variables; contract with the physical gradients of the barycentric
    coordinates to obtain physical derivatives.
    """
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    npts = lam.shape[0]
    val = np.zeros((npts, N_P3))
    grad = np.zeros((npts, N_P3, 3))
    hess = np.zeros((npts, N_P3, 3, 3))
    for i in range(3):
        li = lam[:, i]
        val[:, i] = 4.5 * li * (li - 1.0 / 3.0) * (li - 2.0 / 3.0)
        grad[:, i, i] = 4.5 * (3.0 * li**2 - 2.0 * li + 2.0 / 9.0)
        hess[:, i, i, i] = 4.5 * (6.0 * li - 2.0)
    for k, (p, q) in enumerate(EDGE_NODE_PAIRS):
        a = 3 + k
        lp, lq = lam[:, p], lam[:, q]
        val[:, a] = 13.5 * lp * lq * (lp - 1.0 / 3.0)
        grad[:, a, p] = 13.5 * (2.0 * lp * lq - lq / 3.0)
        grad[:, a, q] = 13.5 * (lp**2 - lp / 3.0)
        hess[:, a, p, p] = 27.0 * lq
        hess[:, a, p, q] = hess[:, a, q, p] = 13.5 * (2.0 * lp - 1.0 / 3.0)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    val[:, 9] = 27.0 * l0 * l1 * l2
    grad[:, 9, 0] = 27.0 * l1 * l2
    grad[:, 9, 1] = 27.0 * l0 * l2
    grad[:, 9, 2] = 27.0 * l0 * l1
    hess[:, 9, 0, 1] = hess[:, 9, 1, 0] = 27.0 * l2
    hess[:, 9, 0, 2] = hess[:, 9, 2, 0] = 27.0 * l1
    hess[:, 9, 1, 2] = hess[:, 9, 2, 1] = 27.0 * l0
    return val, grad, hess


def lagrange_p2(bary):
    """Values and barycentric gradients of the quadratic Lagrange basis.

    Node order: vertices 0, 1, 2 then the midpoint of edge i (opposite
    vertex i) as node 3 + i.
    """
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    npts = lam.shape[0]
    val = np.zeros((npts, N_P2))
    grad = np.zeros((npts, N_P2, 3))
    for i in range(3):
        li = lam[:, i]
        val[:, i] = li * (2.0 * li - 1.0)
        grad[:, i, i] = 4.0 * li - 1.0
        p, q = (i + 1) % 3, (i + 2) % 3
        val[:, 3 + i] = 4.0 * lam[:, p] * lam[:, q]
        grad[:, 3 + i, p] = 4.0 * lam[:, q]
        grad[:, 3 + i, q] = 4.0 * lam[:, p]
    return val, grad


def p2_node_barycentric() -> np.ndarray:
    nodes = np.zeros((N_P2, 3))
    nodes[:3] = np.eye(3)
    for i in range(3):
        nodes[3 + i, (i + 1) % 3] = 0.5
        nodes[3 + i, (i + 2) % 3] = 0.5
    return nodes


def triangle_geometry(coords):
    """Signed areas and physical gradients of barycentric coordinates.

    ``coords`` has shape (nT, 3, 2). Returns ``area`` (nT,) and
    ``grad_lambda`` (nT, 3, 2).
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        coords = coords[None]
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(np.abs(det) <= 1e-300):
        raise ValueError("degenerate triangle (zero area)")
    g = np.empty((coords.shape[0], 3, 2))
    g[:, 1, 0] = e2[:, 1] / det
    g[:, 1, 1] = -e2[:, 0] / det
    g[:, 2, 0] = -e1[:, 1] / det
    g[:, 2, 1] = e1[:, 0] / det
    g[:, 0] = -(g[:, 1] + g[:, 2])
    return 0.5 * det, g


def physical_gradients(grad_bary, grad_lambda):
    """Contract barycentric gradients (npts, nb, 3) with (3, 2)."""
    return grad_bary @ grad_lambda


def physical_hessians(hess_bary, grad_lambda):
    """Contract barycentric Hessians (npts, nb, 3, 3) with (3, 2)."""
    return np.einsum("pbij,ik,jl->pbkl", hess_bary, grad_lambda, grad_lambda)


# ---------------------------------------------------------------------------
# symmetric matrices

def sym(v):
    """(…, 3) vector -> (…, 2, 2) symmetric matrix."""
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 1]
    out[..., 1, 1] = v[..., 2]
    return out


def vec(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]], axis=-1)


def rot90(t):
    """Rotate by +90 degrees: (t1, t2) -> (-t2, t1)."""
    t = np.asarray(t, dtype=float)
    return np.stack([-t[..., 1], t[..., 0]], axis=-1)


def outer_vec(a, b):
    """vec(a b^T + b a^T) / 2."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([a[..., 0] * b[..., 0],
                     0.5 * (a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]),
                     a[..., 1] * b[..., 1]], axis=-1)


def edge_frames(t, n=None):
    """Return vec(n n^T), vec(n t^T + t n^T), vec(t t^T) for tangents ``t``.

    ``n`` defaults to ``t`` rotated by +90 degrees.
    """
    t = np.asarray(t, dtype=float)
    if n is None:
        n = rot90(t)
    return outer_vec(n, n), 2.0 * outer_vec(n, t), outer_vec(t, t)


def frame_components(s, t, n=None):
    """Coordinates of vec ``s`` in the frame {n n^T, n t^T + t n^T, t t^T}."""
    t = np.asarray(t, dtype=float)
    if n is None:
        n = rot90(t)
    m = sym(s)
    mn = np.einsum("...ij,...j->...i", m, n)
    mt = np.einsum("...ij,...j->...i", m, t)
    return np.stack([np.sum(n * mn, -1), np.sum(t * mn, -1), np.sum(t * mt, -1)], axis=-1)


def matvec(s, x):
    """Apply vec-stored symmetric matrices to vectors."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.stack([s[..., 0] * x[..., 0] + s[..., 1] * x[..., 1],
                     s[..., 1] * x[..., 0] + s[..., 2] * x[..., 1]], axis=-1)


# ---------------------------------------------------------------------------
# the 30 role-indexed stress shapes of one triangle

@dataclass
class LocalStressBasis:
    """Stress shapes of one triangle indexed by role.

    Index layout::

        3*i + j           theta_ij = phi_i S_j          (vertex i, j = 0..2)
        9 + j             theta_0j = phi_0 S_j          (interior bubble)
        12 + 4*i + 2*j + m  beta_ijm = phi_ij Sperp_{e_i,m}
        24 + 2*i + j      alpha_ij = phi_ij S_{e_i}

    Edge tangents run from the endpoint with the smaller id to the larger one
    (``vertex_ids`` default to the local numbering).
    """

    vertices: np.ndarray
    vertex_ids: tuple = (0, 1, 2)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(3, 2)
        area, grad = triangle_geometry(self.vertices[None])
        if area[0] <= 0:
            raise ValueError("triangle must have positive orientation")
        self.area = float(area[0])
        self.grad_lambda = grad[0]
        nodes = np.zeros(30, dtype=int)
        mats = np.zeros((30, 3))
        eye = np.eye(3)
        for i in range(3):
            for j in range(3):
                nodes[3 * i + j] = i
                mats[3 * i + j] = eye[j]
        for j in range(3):
            nodes[9 + j] = 9
            mats[9 + j] = eye[j]
        self.edge_tangents = np.zeros((3, 2))
        for i in range(3):
            p, q = (i + 1) % 3, (i + 2) % 3
            a, b = (p, q) if self.vertex_ids[p] < self.vertex_ids[q] else (q, p)
            t = self.vertices[b] - self.vertices[a]
            t /= np.linalg.norm(t)
            self.edge_tangents[i] = t
            s1, s2, se = edge_frames(t)
            for j in range(2):
                node = 3 + 2 * i + j
                nodes[12 + 4 * i + 2 * j] = node
                mats[12 + 4 * i + 2 * j] = s1
                nodes[13 + 4 * i + 2 * j] = node
                mats[13 + 4 * i + 2 * j] = s2
                nodes[24 + 2 * i + j] = node
                mats[24 + 2 * i + j] = se
        self.nodes = nodes
        self.matrices = mats

    def to_physical(self, bary):
        bary = np.atleast_2d(bary)
        return bary @ self.vertices

    def value(self, index, bary):
        """Shape ``index`` at barycentric points -> (npts, 3) vec."""
        phi, _, _ = lagrange_p3(bary)
        return phi[:, self.nodes[index], None] * self.matrices[index]

    def divergence(self, index, bary):
        """Row-wise divergence S grad(phi) -> (npts, 2)."""
        _, dphi, _ = lagrange_p3(bary)
        g = dphi[:, self.nodes[index]] @ self.grad_lambda
        return matvec(self.matrices[index], g)


def stress_shape(basis: LocalStressBasis, index: int, bary):
    if not 0 <= index < 30:
        raise IndexError(index)
    return basis.value(index, bary)


def stress_shape_div(basis: LocalStressBasis, index: int, bary):
    if not 0 <= index < 30:
        raise IndexError(index)
    return basis.divergence(index, bary)


def disp_shape(bary):
    """The 12 vector P2 shapes (npts, 12, 2); shape 2*b + c is psi_b e_c."""
    psi, _ = lagrange_p2(bary)
    out = np.zeros((psi.shape[0], 12, 2))
    out[:, 0::2, 0] = psi
    out[:, 1::2, 1] = psi
    return out
