"""Saddle-point assembly and solution of the mixed elasticity system.

The discrete problem is

    (A sigma, tau) + (div tau, u) = <u_D, tau n>_{Gamma_D}
    (div sigma, v)               = (f, v)

with traction data imposed on the stress DOFs. Local matrices act on the
nodal-matrix coefficients of :mod:`nestedhz.dofs` and are pulled back with
``L``.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .dofs import CORNER, FRAME, PLAIN, DofMap, _bary_in, evaluate
from .quadrature import quad_edge, quad_triangle
from .shapes import FROBENIUS_WEIGHTS, TRACE_VEC, lagrange_p2, lagrange_p3, matvec, triangle_geometry

log = logging.getLogger(__name__)

MIN_MASS_DEGREE = 6
RESIDUAL_TOL = 1e-10


# --------------------------------------------------------------------------
# material

@dataclass(frozen=True)
class Compliance:
    """A tau = (tau - lam / (2 mu + 2 lam) tr(tau) I) / (2 mu).

    ``lam`` and ``mu`` may be arrays with one value per element.
    """

    lam: object
    mu: object

    def __post_init__(self):
        if np.any(np.asarray(self.mu) <= 0) or np.any(np.asarray(self.lam) < 0):
            raise ValueError("need mu > 0 and lam >= 0")

    @classmethod
    def from_young(cls, E, nu, plane="strain"):
        mu = E / (2.0 * (1.0 + nu))
        if plane == "strain":
            lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        elif plane == "stress":
            lam = E * nu / (1.0 - nu**2)
        else:
            raise ValueError(f"unknown plane assumption {plane!r}")
        return cls(lam, mu)

    def apply(self, tau, elements=None):
        """A tau for vec-stored tau (..., 3)."""
        lam, mu = self._at(elements)
        tau = np.asarray(tau, dtype=float)
        c = lam / (2.0 * mu + 2.0 * lam)
        tr = tau[..., 0] + tau[..., 2]
        out = tau - (c * tr)[..., None] * TRACE_VEC
        return out / (2.0 * np.asarray(mu, dtype=float))[..., None]

    def matrix(self, elements=None):
        """G with (A sigma) : tau = vec(tau)^T G vec(sigma); shape (..., 3, 3)."""
        lam, mu = self._at(elements)
        lam = np.asarray(lam, dtype=float)
        mu = np.asarray(mu, dtype=float)
        c = lam / (2.0 * mu + 2.0 * lam)
        G = np.diag(FROBENIUS_WEIGHTS) - c[..., None, None] * np.outer(TRACE_VEC, TRACE_VEC)
        return G / (2.0 * mu)[..., None, None]

    def _at(self, elements):
        lam, mu = self.lam, self.mu
        if elements is not None:
            if np.ndim(lam):
                lam = np.asarray(lam)[elements]
            if np.ndim(mu):
                mu = np.asarray(mu)[elements]
        return lam, mu


def compliance_apply(tensor: Compliance, tau):
    return tensor.apply(tau)


# --------------------------------------------------------------------------
# reference integrals

@lru_cache(maxsize=None)
def _reference(degree):
    q = quad_triangle(degree)
    phi, dphi, _ = lagrange_p3(q.points)
    psi, _ = lagrange_p2(q.points)
    w = q.weights
    mass = np.einsum("q,qa,qb->ab", w, phi, phi)
    # R[b, a, i] = int psi_b d phi_a / d lambda_i
    R = np.einsum("q,qb,qai->bai", w, psi, dphi)
    return mass, R


def _block_diag(blocks):
    n, r, c = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(n * r, n * c)).tocsr()


def _chunks(n, threads):
    if threads <= 1 or n < 2 * threads:
        return [slice(0, n)]
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _map_chunks(fn, n, threads):
    parts = _chunks(n, threads)
    if len(parts) == 1:
        return fn(parts[0])
    with ThreadPoolExecutor(max_workers=threads) as ex:
        results = list(ex.map(fn, parts))
    return np.concatenate(results)


def local_mass(mesh, tensor, degree=8, threads=1):
    """(nT, 30, 30) blocks of int A sigma : tau on nodal-matrix coefficients."""
    if degree < MIN_MASS_DEGREE:
        raise ValueError(f"quadrature degree {degree} is too low for the stress mass matrix")
    mass, _ = _reference(degree)
    area = mesh.areas

    def work(s):
        G = tensor.matrix(np.arange(mesh.n_triangles)[s])
        if G.ndim == 2:
            G = np.broadcast_to(G, (s.stop - s.start, 3, 3))
        blk = 2.0 * area[s, None, None, None, None] * mass[None, :, None, :, None] * G[:, None, :, None, :]
        return blk.reshape(-1, 30, 30)

    return _map_chunks(work, mesh.n_triangles, threads)


def local_divergence(mesh, degree=8):
    """(nT, 12, 30) blocks of int div(sigma) . v."""
    _, R = _reference(degree)
    _, g = triangle_geometry(mesh.coords())
    D = 2.0 * mesh.areas[:, None, None, None] * np.einsum("bai,kid->kbad", R, g)  # (nT, 6, 10, 2)
    out = np.zeros((mesh.n_triangles, 6, 2, 10, 3))
    out[:, :, 0, :, 0] = D[..., 0]
    out[:, :, 0, :, 1] = D[..., 1]
    out[:, :, 1, :, 1] = D[..., 0]
    out[:, :, 1, :, 2] = D[..., 1]
    return out.reshape(-1, 12, 30)


def load_vector(mesh, f, degree=12):
    """int f . v for the 12 P2 shapes of every element, flattened."""
    nT = mesh.n_triangles
    if f is None:
        return np.zeros(12 * nT)
    q = quad_triangle(degree)
    psi, _ = lagrange_p2(q.points)
    X = np.einsum("qi,kid->kqd", q.points, mesh.coords()).reshape(-1, 2)
    F = np.asarray(f(X), dtype=float).reshape(nT, -1, 2)
    out = 2.0 * mesh.areas[:, None, None] * np.einsum("q,qb,kqc->kbc", q.weights, psi, F)
    return out.reshape(-1)


# --------------------------------------------------------------------------
# boundary data

def _edge_points(mesh, edges, degree):
    q = quad_edge(degree)
    a = mesh.points[mesh.edges[edges, 0]]
    b = mesh.points[mesh.edges[edges, 1]]
    X = a[:, None] + q.points[None, :, None] * (b - a)[:, None]
    return q, X


def _edge_trace_rows(mesh, edges, X):
    """Element, barycentric coords and cubic shape values at edge points."""
    k = mesh.edge_tris[edges, 0]
    nq = X.shape[1]
    kk = np.repeat(k, nq)
    bary = _bary_in(mesh.coords(kk), X.reshape(-1, 2))
    phi, _, _ = lagrange_p3(bary)
    return k, kk, bary, phi


def dirichlet_rhs(dofmap: DofMap, u_D, degree=12):
    """<u_D, tau n> over Dirichlet edges for every global stress DOF."""
    mesh = dofmap.mesh
    dedges = np.nonzero(mesh.edge_markers > 0)[0]
    out = np.zeros(30 * mesh.n_triangles)
    if len(dedges) == 0 or u_D is None:
        return dofmap.L.T @ out
    q, X = _edge_points(mesh, dedges, max(degree, 10))
    k, kk, _, phi = _edge_trace_rows(mesh, dedges, X)
    nq = len(q.weights)
    n = mesh.edge_normals[dedges] * mesh.outward_sign[dedges, None]
    U = np.asarray(u_D(X.reshape(-1, 2)), dtype=float).reshape(len(dedges), nq, 2)
    # (C n) . u = c0 n0 u0 + c1 (n1 u0 + n0 u1) + c2 n1 u1
    un = np.stack([n[:, None, 0] * U[..., 0],
                   n[:, None, 1] * U[..., 0] + n[:, None, 0] * U[..., 1],
                   n[:, None, 1] * U[..., 1]], axis=-1)  # (ne, nq, 3)
    w = q.weights * mesh.edge_lengths[dedges, None]
    contrib = np.einsum("eq,eqa,eqj->eaj", w, phi.reshape(len(dedges), nq, 10), un)
    np.add.at(out, (30 * k[:, None] + np.arange(30)[None]).ravel(), contrib.reshape(-1))
    return dofmap.L.T @ out


@dataclass
class NeumannData:
    dofs: np.ndarray
    values: np.ndarray
    corner_residuals: dict = field(default_factory=dict)


def _corner_equations(n_p, g_p, n_m, g_m):
    rows, rhs = [], []
    for a, b, g in ((n_p, n_p, g_p), (n_m, n_m, g_m), (n_p, n_m, g_m), (n_m, n_p, g_p)):
        rows.append([a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[1] * b[1]])
        rhs.append(a @ g)
    return np.array(rows), np.array(rhs)


def neumann_interpolate(dofmap: DofMap, g, degree=12):
    """Values of the stress DOFs fixed by the traction ``g(x, marker)``.

    Vertex DOFs come from point conditions; edge DOFs match the P1 moments of
    ``n_e . sigma n_e`` and ``t_e . sigma n_e`` on every traction edge.
    """
    mesh = dofmap.mesh
    x = np.zeros(dofmap.n_stress)
    sign = mesh.outward_sign
    markers = mesh.edge_markers

    def gval(v, e):
        return np.asarray(g(mesh.points[v][None], int(markers[e])), dtype=float).reshape(2)

    residuals = {}
    for v, es in dofmap.neumann_vertices.items():
        off = dofmap.vertex_offsets[v]
        typ = dofmap.vertex_type[v]
        if typ == FRAME:
            t, n = dofmap.vertex_frames[v]
            acc = np.zeros(2)
            for e in es:
                eps = sign[e] * float(mesh.edge_normals[e] @ n)
                gv = eps * gval(v, e)
                acc += [n @ gv, t @ gv]
            x[off:off + 2] = acc / len(es)
        elif typ == PLAIN:
            e_p, e_m = es
            n_p = sign[e_p] * mesh.edge_normals[e_p]
            n_m = sign[e_m] * mesh.edge_normals[e_m]
            A, b = _corner_equations(n_p, gval(v, e_p), n_m, gval(v, e_m))
            s, *_ = np.linalg.lstsq(A, b, rcond=None)
            x[off:off + 3] = s
            res = float(np.linalg.norm(A @ s - b))
            residuals[v] = res
            if res > 1e-12:
                log.info("inconsistent traction at vertex %d, least squares residual %.3e", v, res)
        elif typ == CORNER:
            rec = dofmap.corners[v]
            for slot, e in ((0, rec.edges[0]), (2, rec.edges[-1])):
                if markers[e] >= 0:
                    continue
                gv = sign[e] * gval(v, e)
                x[off + slot] = mesh.edge_normals[e] @ gv
                x[off + slot + 1] = mesh.edge_tangents[e] @ gv
            residuals[v] = 0.0

    nedges = np.nonzero(markers < 0)[0]
    if len(nedges):
        q, X = _edge_points(mesh, nedges, degree)
        k, kk, _, phi = _edge_trace_rows(mesh, nedges, X)
        nq = len(q.weights)
        local = dofmap.local(x)[k]  # vertex part only
        C = np.einsum("eqa,eaj->eqj", phi.reshape(len(nedges), nq, 10), local)
        n = mesh.edge_normals[nedges]
        t = mesh.edge_tangents[nedges]
        Cn = matvec(C, n[:, None, :])
        G = np.zeros((len(nedges), nq, 2))
        for m in np.unique(markers[nedges]):
            sel = markers[nedges] == m
            G[sel] = np.asarray(g(X[sel].reshape(-1, 2), int(m)), dtype=float).reshape(-1, nq, 2)
        G *= sign[nedges, None, None]
        r = G - Cn
        rn = np.einsum("eqd,ed->eq", r, n)
        rt = np.einsum("eqd,ed->eq", r, t)
        s = q.points
        # 1D cubic nodal functions of the nodes at s = 1/3 and 2/3
        p1 = 13.5 * s * (1 - s) * (2.0 / 3.0 - s)
        p2 = 13.5 * s * (1 - s) * (s - 1.0 / 3.0)
        test = np.vstack([np.ones_like(s), s])
        A = np.einsum("q,iq,pq->ip", q.weights, test, np.vstack([p1, p2]))
        bn = np.einsum("q,iq,eq->ei", q.weights, test, rn)
        bt = np.einsum("q,iq,eq->ei", q.weights, test, rt)
        beta_n = np.linalg.solve(A, bn.T).T  # (ne, 2 slots)
        beta_t = np.linalg.solve(A, bt.T).T
        dofs = dofmap.edge_dofs(nedges)
        x[dofs[:, 0]] = beta_n[:, 0]
        x[dofs[:, 1]] = beta_t[:, 0]
        x[dofs[:, 2]] = beta_n[:, 1]
        x[dofs[:, 3]] = beta_t[:, 1]

    cons = dofmap.constrained
    return NeumannData(cons, x[cons], residuals)


def corner_traction_residual(dofmap: DofMap, coeffs, g):
    """Largest |sigma_h n - g| at relaxed corners, evaluated from each
    boundary triangle of the fan."""
    mesh = dofmap.mesh
    local = dofmap.local(coeffs)
    worst = 0.0
    for v, rec in dofmap.corners.items():
        for e, k in ((rec.edges[0], rec.triangles[0]), (rec.edges[-1], rec.triangles[-1])):
            m = mesh.edge_markers[e]
            if m >= 0:
                continue
            loc = int(np.nonzero(mesh.triangles[k] == v)[0][0])
            s = local[k, loc]
            n = mesh.outward_sign[e] * mesh.edge_normals[e]
            gv = np.asarray(g(mesh.points[v][None], int(m)), dtype=float).reshape(2)
            worst = max(worst, float(np.linalg.norm(matvec(s, n) - gv)))
    return worst


# --------------------------------------------------------------------------
# system

@dataclass
class SaddleSystem:
    """Blocks of [[M, B^T], [B, 0]] with right-hand sides."""

    dofmap: DofMap
    M: sp.csr_matrix
    B: sp.csr_matrix
    stress_rhs: np.ndarray
    load: np.ndarray
    constrained: np.ndarray
    constrained_values: np.ndarray
    corner_residuals: dict = field(default_factory=dict)

    def matrix(self):
        return sp.bmat([[self.M, self.B.T], [self.B, None]], format="csr")


def assemble(dofmap: DofMap, tensor: Compliance, f=None, u_D=None, g=None,
             quad_degree=8, load_degree=12, threads=1) -> SaddleSystem:
    mesh = dofmap.mesh
    L = dofmap.L
    Mloc = _block_diag(local_mass(mesh, tensor, quad_degree, threads))
    M = (L.T @ (Mloc @ L)).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    Bk = local_divergence(mesh, quad_degree)
    B = (_block_diag(Bk) @ L).tocsr()
    F = load_vector(mesh, f, load_degree)
    FD = dirichlet_rhs(dofmap, u_D)
    if g is not None:
        nd = neumann_interpolate(dofmap, g)
        cons, vals, res = nd.dofs, nd.values, nd.corner_residuals
    else:
        cons = dofmap.constrained
        vals = np.zeros(len(cons))
        res = {}
    return SaddleSystem(dofmap, M, B, FD, F, cons, vals, res)


@dataclass
class StressField:
    dofmap: DofMap
    coeffs: np.ndarray

    def __call__(self, x, tris=None):
        return evaluate(self.dofmap, self.coeffs, x, tris)

    def local(self):
        return self.dofmap.local(self.coeffs)


@dataclass
class DisplacementField:
    dofmap: DofMap
    coeffs: np.ndarray

    def local(self):
        return self.coeffs.reshape(-1, 6, 2)

    def __call__(self, x, tris=None):
        mesh = self.dofmap.mesh
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if tris is None:
            tris, bary = mesh.locate(x)
        else:
            bary = _bary_in(mesh.coords(tris), x)
        psi, _ = lagrange_p2(bary)
        return np.einsum("pb,pbc->pc", psi, self.local()[tris])


class SolveError(RuntimeError):
    pass


def _direct(K, rhs, tol, steps=3):
    try:
        lu = splu(K.tocsc(), permc_spec="COLAMD")
    except RuntimeError as err:
        raise SolveError(f"factorization failed: {err}") from err
    z = lu.solve(rhs)
    for _ in range(steps):
        r = rhs - K @ z
        if np.linalg.norm(r) <= 1e-2 * tol * np.linalg.norm(rhs):
            break
        z += lu.solve(r)
    return z


def _augmented(K, rhs, M, B, tol, rho, maxiter):
    """GMRES on the (equilibrated) saddle system, preconditioned by one
    augmented Lagrangian Uzawa sweep; only the SPD block ``M + r B^T B`` is
    factorized."""
    BtB = (B.T @ B).tocsr()
    d = BtB.diagonal()
    r = rho * np.median(M.diagonal()) / np.median(d[d > 0])
    try:
        lu = splu((M + r * BtB).tocsc(), permc_spec="MMD_AT_PLUS_A",
                  options=dict(SymmetricMode=True), diag_pivot_thresh=0.0)
    except RuntimeError as err:
        raise SolveError(f"factorization failed: {err}") from err
    nf = M.shape[0]

    def sweep(res):
        g, f = res[:nf], res[nf:]
        sig = lu.solve(g + r * (B.T @ f))
        return np.concatenate([sig, r * (B @ sig - f)])

    P = LinearOperator(K.shape, matvec=sweep, dtype=float)
    nrm = np.linalg.norm(rhs)
    z = np.zeros_like(rhs)
    last = np.inf
    # outer refinement around restarted GMRES; the attainable residual is
    # limited by the conditioning, so stop once it no longer improves
    for _ in range(maxiter):
        res = rhs - K @ z
        rn = np.linalg.norm(res)
        if rn <= 1e-2 * tol * nrm or (rn <= tol * nrm and rn > 0.5 * last):
            break
        last = rn
        dz, _ = gmres(K, res, M=P, rtol=1e-2 * tol * nrm / rn, atol=0.0, restart=40, maxiter=1)
        z += dz
    return z


def solve(system: SaddleSystem, tol=RESIDUAL_TOL, method="augmented", rho=1e6, maxiter=20):
    """Eliminate constrained DOFs and solve the reduced saddle-point system.

    The reduced system is first equilibrated symmetrically (unit stress
    diagonal, unit row norms of the scaled divergence block).
    ``method="augmented"`` (default) factorizes the SPD block
    ``M + r B^T B`` and runs preconditioned GMRES, falling back to a direct
    LU of the indefinite matrix if it stalls; ``method="direct"`` uses the
    LU right away. Either way the relative residual of the equilibrated
    system must end below ``tol``.
    """
    ns = system.dofmap.n_stress
    cons = system.constrained
    free = np.setdiff1d(np.arange(ns), cons)
    xc = system.constrained_values
    M, B = system.M, system.B
    Mf = M[free]
    Mff = Mf[:, free]
    Bf = B[:, free]
    rhs = np.concatenate([system.stress_rhs[free] - Mf[:, cons] @ xc,
                          system.load - B[:, cons] @ xc])
    if method not in ("augmented", "direct"):
        raise ValueError(f"unknown solver method {method!r}")
    # symmetric equilibration: unit stress diagonal, unit diagonal of B S^2 B^T
    s_sig = 1.0 / np.sqrt(Mff.diagonal())
    Bs = Bf @ sp.diags(s_sig)
    s_u = 1.0 / np.sqrt(np.asarray(Bs.multiply(Bs).sum(axis=1)).ravel())
    S = sp.diags(np.concatenate([s_sig, s_u]))
    Mss = (sp.diags(s_sig) @ Mff @ sp.diags(s_sig)).tocsr()
    Bss = (sp.diags(s_u) @ Bs).tocsr()
    K = sp.bmat([[Mss, Bss.T], [Bss, None]], format="csr")
    rhs = S @ rhs
    nrm = np.linalg.norm(rhs)
    if nrm == 0.0:
        z = np.zeros(K.shape[0])
    else:
        if method == "augmented":
            z = _augmented(K, rhs, Mss, Bss, tol, rho, maxiter)
            if not np.linalg.norm(rhs - K @ z) <= tol * nrm:
                log.info("augmented Lagrangian solve stalled, falling back to direct LU")
                z = _direct(K, rhs, tol)
        else:
            z = _direct(K, rhs, tol)
        rel = np.linalg.norm(rhs - K @ z) / nrm
        if not np.isfinite(rel) or rel > tol:
            raise SolveError(f"relative residual {rel:.2e} exceeds {tol:.0e}")
        z = S @ z
    sigma = np.zeros(ns)
    sigma[free] = z[:len(free)]
    sigma[cons] = xc
    u = z[len(free):]
    return StressField(system.dofmap, sigma), DisplacementField(system.dofmap, u)


def write_coo(matrix, path):
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write("coo v1\n")
        for i, j, v in zip(m.row, m.col, m.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def read_coo(path, shape=None):
    with open(path) as fh:
        if fh.readline().strip() != "coo v1":
            raise ValueError("not a coo v1 file")
        data = np.loadtxt(fh, ndmin=2)
    if len(data) == 0:
        return sp.csr_matrix(shape or (0, 0))
    i, j, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    return sp.csr_matrix((v, (i, j)), shape=shape)
