"""Residual error estimator, Doerfler marking and the adaptive loop.

For ``tau = A sigma_h`` the element indicator is

    eta^2(K) = h_K^4 ||curl curl tau||_K^2
               + sum_{e in E(K)} (h_K ||J_e1||_e^2 + h_K^3 ||J_e2||_e^2)

with tangential jumps ``J_e1 = [tau t.t]`` and ``J_e2 = [curl tau . t]`` on
interior edges. On Dirichlet edges the jumps are replaced by the residuals
of the boundary data, using ``n = (t2, -t1)``:

    J_e1 = tau t.t - d_t(u_D.t)
    J_e2 = curl tau . t + d_tt(u_D.n) - d_t(tau t.n)

Traction edges carry no jump terms; their data error enters ``osc_g``.
All derivatives are evaluated exactly from the cubic nodal coefficients.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble, solve
from .dofs import DofMap, _bary_in, build_dof_map, prolong
from .mesh import refine
from .quadrature import quad_edge, quad_triangle
from .shapes import lagrange_p2, lagrange_p3, matvec, triangle_geometry

log = logging.getLogger(__name__)


@dataclass
class Estimate:
    eta2: np.ndarray  # per element
    osc_f2: np.ndarray  # per element
    osc_g2: np.ndarray  # per traction edge
    neumann_edges: np.ndarray

    @property
    def eta2_total(self):
        return float(np.sum(self.eta2))

    @property
    def osc_f2_total(self):
        return float(np.sum(self.osc_f2))

    @property
    def osc_g2_total(self):
        return float(np.sum(self.osc_g2))

    @property
    def total(self):
        """sqrt(eta^2 + osc_f^2 + osc_g^2)."""
        return float(np.sqrt(self.eta2_total + self.osc_f2_total + self.osc_g2_total))

    @property
    def indicators(self):
        return self.eta2 + self.osc_f2


def _curl(grad):
    """curl of a vec-stored field from its gradient (..., 3, 2)."""
    return np.stack([grad[..., 1, 0] - grad[..., 0, 1], grad[..., 2, 0] - grad[..., 1, 1]], axis=-1)


def _fields_at(T, g_lambda, tris, bary, hessian=False):
    """Value, gradient (and optionally curl curl) of the cubic field with
    nodal matrices ``T`` (nT, 10, 3) at one point per entry of ``tris``."""
    phi, dphi, hphi = lagrange_p3(bary)
    gl = g_lambda[tris]
    Tk = T[tris]
    val = np.einsum("pa,paj->pj", phi, Tk)
    grad_phi = np.einsum("pai,pid->pad", dphi, gl)
    grad = np.einsum("pad,paj->pjd", grad_phi, Tk)
    if not hessian:
        return val, grad
    H = np.einsum("paij,pik,pjl->pakl", hphi, gl, gl)
    cc = np.einsum("pa,pa->p", H[:, :, 1, 1], Tk[..., 0]) \
        - 2.0 * np.einsum("pa,pa->p", H[:, :, 0, 1], Tk[..., 1]) \
        + np.einsum("pa,pa->p", H[:, :, 0, 0], Tk[..., 2])
    return val, grad, cc


def compliance_coefficients(dofmap: DofMap, coeffs, tensor):
    """Nodal matrices of A sigma_h (nT, 10, 3)."""
    C = dofmap.local(coeffs)
    nT = dofmap.mesh.n_triangles
    return tensor.apply(C, np.repeat(np.arange(nT), 10).reshape(nT, 10))


def estimate(dofmap: DofMap, coeffs, tensor, f=None, u_D_derivs=None, g=None, degree=10) -> Estimate:
    """Element indicators and data oscillations for the discrete stress.

    ``u_D_derivs(x)`` returns the gradient (n, 2, 2) and Hessian (n, 2, 2, 2)
    of the Dirichlet data (``grad[i, j] = d_j u_i``); ``None`` means zero data.
    ``g(x, marker)`` is the traction on the Neumann segment ``marker``.
    """
    mesh = dofmap.mesh
    nT = mesh.n_triangles
    if len(coeffs) != dofmap.n_stress:
        raise ValueError("coefficient vector does not match the DOF map")
    T = compliance_coefficients(dofmap, coeffs, tensor)
    _, g_lambda = triangle_geometry(mesh.coords())
    hK = mesh.h

    # volume term: curl curl of a cubic is linear
    q = quad_triangle(2)
    nq = len(q.weights)
    tris = np.repeat(np.arange(nT), nq)
    bary = np.tile(q.points, (nT, 1))
    _, _, cc = _fields_at(T, g_lambda, tris, bary, hessian=True)
    vol = 2.0 * mesh.areas * np.einsum("q,kq->k", q.weights, cc.reshape(nT, nq) ** 2)
    eta2 = hK**4 * vol

    # edge terms
    qe = quad_edge(degree)
    ne = len(qe.weights)
    markers = mesh.edge_markers
    a = mesh.points[mesh.edges[:, 0]]
    b = mesh.points[mesh.edges[:, 1]]
    t = mesh.edge_tangents
    length = mesh.edge_lengths

    def traces(edges, slot):
        k = mesh.edge_tris[edges, slot]
        X = (a[edges, None] + qe.points[None, :, None] * (b - a)[edges, None]).reshape(-1, 2)
        kk = np.repeat(k, ne)
        val, grad = _fields_at(T, g_lambda, kk, _bary_in(mesh.coords(kk), X))
        tt = np.repeat(t[edges], ne, axis=0)
        j1 = np.einsum("pi,pi->p", matvec(val, tt), tt)
        j2 = np.einsum("pi,pi->p", _curl(grad), tt)
        return k, X, tt, val, grad, j1, j2

    inner = np.nonzero(~mesh.is_boundary_edge)[0]
    if len(inner):
        k1, _, _, _, _, a1, b1 = traces(inner, 0)
        k2, _, _, _, _, a2, b2 = traces(inner, 1)
        w = qe.weights[None] * length[inner, None]
        J1 = np.sum(w * (a1 - a2).reshape(-1, ne) ** 2, axis=1)
        J2 = np.sum(w * (b1 - b2).reshape(-1, ne) ** 2, axis=1)
        for k in (k1, k2):
            np.add.at(eta2, k, hK[k] * J1 + hK[k] ** 3 * J2)

    dedges = np.nonzero(markers > 0)[0]
    if len(dedges):
        k, X, tt, val, grad, j1, j2 = traces(dedges, 0)
        nn = np.column_stack([tt[:, 1], -tt[:, 0]])
        # d_t (tau t . n)
        dtau = np.einsum("pjd,pd->pj", grad, tt)
        j2 = j2 - np.einsum("pi,pi->p", matvec(dtau, tt), nn)
        if u_D_derivs is not None:
            G, H = u_D_derivs(X)
            j1 = j1 - np.einsum("pi,pij,pj->p", tt, G, tt)
            j2 = j2 + np.einsum("pi,pijk,pj,pk->p", nn, H, tt, tt)
        w = qe.weights[None] * length[dedges, None]
        J1 = np.sum(w * j1.reshape(-1, ne) ** 2, axis=1)
        J2 = np.sum(w * j2.reshape(-1, ne) ** 2, axis=1)
        np.add.at(eta2, k, hK[k] * J1 + hK[k] ** 3 * J2)

    osc_f2 = np.zeros(nT)
    if f is not None:
        osc_f2 = hK**2 * projection_error(mesh, f)

    nedges = np.nonzero(markers < 0)[0]
    osc_g2 = np.zeros(len(nedges))
    if g is not None and len(nedges):
        C = dofmap.local(coeffs)
        k = mesh.edge_tris[nedges, 0]
        X = (a[nedges, None] + qe.points[None, :, None] * (b - a)[nedges, None])
        kk = np.repeat(k, ne)
        phi, _, _ = lagrange_p3(_bary_in(mesh.coords(kk), X.reshape(-1, 2)))
        S = np.einsum("pa,paj->pj", phi, C[kk])
        n = np.repeat(mesh.edge_normals[nedges] * mesh.outward_sign[nedges, None], ne, axis=0)
        gh = matvec(S, n).reshape(-1, ne, 2)
        for m in np.unique(markers[nedges]):
            sel = markers[nedges] == m
            gv = np.asarray(g(X[sel].reshape(-1, 2), int(m)), dtype=float).reshape(-1, ne, 2)
            d = np.sum((gv - gh[sel]) ** 2, axis=2)
            osc_g2[sel] = length[nedges[sel]] ** 2 * np.einsum("q,eq->e", qe.weights, d)
    return Estimate(eta2, osc_f2, osc_g2, nedges)


def projection_error(mesh, f, degree=12):
    """||f - Q f||^2_K per element, Q the L2 projection onto vector P2."""
    nT = mesh.n_triangles
    q = quad_triangle(degree)
    psi, _ = lagrange_p2(q.points)
    X = np.einsum("qi,kid->kqd", q.points, mesh.coords()).reshape(-1, 2)
    F = np.asarray(f(X), dtype=float).reshape(nT, -1, 2)
    w = q.weights
    Mref = np.einsum("q,qa,qb->ab", w, psi, psi)
    rhs = np.einsum("q,qb,kqc->kbc", w, psi, F)
    coef = np.linalg.solve(Mref, rhs.transpose(1, 0, 2).reshape(6, -1)).reshape(6, nT, 2).transpose(1, 0, 2)
    QF = np.einsum("qb,kbc->kqc", psi, coef)
    return 2.0 * mesh.areas * np.einsum("q,kq->k", w, np.sum((F - QF) ** 2, axis=2))


def mark(estimate, theta):
    """Smallest set M (by count) with sum_M ind >= theta * sum ind.

    Indicators are ``eta^2 + osc_f^2`` per element; ties go to the lower
    element id. Accepts an :class:`Estimate` or a plain array.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    ind = estimate.indicators if isinstance(estimate, Estimate) else np.asarray(estimate, dtype=float)
    total = float(np.sum(ind))
    if total <= 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(ind)), -ind))
    csum = np.cumsum(ind[order])
    k = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:min(k, len(ind))])


# --------------------------------------------------------------------------
# solve, estimate, mark, refine

@dataclass
class LevelResult:
    level: int
    mesh: object
    dofmap: DofMap
    sigma: object
    u: object
    estimate: Estimate
    errors: dict = field(default_factory=dict)
    seconds: float = 0.0

    def row(self):
        e = self.errors
        err_a = e.get("error_A", np.nan)
        est2 = self.estimate.eta2_total + self.estimate.osc_f2_total + self.estimate.osc_g2_total
        return {
            "level": self.level,
            "triangles": self.mesh.n_triangles,
            "stress_dofs": self.dofmap.n_stress,
            "total_dofs": self.dofmap.n_total,
            "eta": float(np.sqrt(self.estimate.eta2_total)),
            "osc_f": float(np.sqrt(self.estimate.osc_f2_total)),
            "osc_g": float(np.sqrt(self.estimate.osc_g2_total)),
            "error_A": err_a,
            "error_Hdiv": e.get("error_Hdiv", np.nan),
            "error_u": e.get("error_u", np.nan),
            "effectivity": err_a**2 / est2 if est2 > 0 and np.isfinite(err_a) else np.nan,
        }


def solve_level(problem, mesh, space, level=0, quad_degree=8, threads=1, errors=True):
    """Assemble, solve, estimate (and measure errors) on one mesh."""
    from .problems import error_norms

    t0 = time.perf_counter()
    kind = problem.space_kind(space, mesh)
    dm = build_dof_map(mesh, kind)
    tensor = problem.material(mesh)
    system = assemble(dm, tensor, problem.f, problem.u_D, problem.g, quad_degree=quad_degree,
                      threads=threads)
    sigma, u = solve(system)
    est = estimate(dm, sigma.coeffs, tensor, problem.f, problem.u_D_derivs, problem.g)
    errs = error_norms(problem, sigma, u, tensor) if errors and problem.has_reference else {}
    res = LevelResult(level, mesh, dm, sigma, u, est, errs)
    res.corner_residuals = system.corner_residuals
    res.seconds = time.perf_counter() - t0
    log.info("level %d: %d triangles, %d dofs, eta %.3e (%.1fs)", level, mesh.n_triangles,
             dm.n_total, np.sqrt(est.eta2_total), res.seconds)
    return res


def adapt_loop(problem, space="extended", theta=0.5, max_levels=20, max_dofs=None, eta_tol=None,
               quad_degree=8, threads=1, audit_prolongation=False, mesh=None, errors=True):
    """SOLVE, ESTIMATE, MARK, REFINE until a stopping rule triggers.

    Stops after ``max_levels`` levels, once the next mesh would exceed
    ``max_dofs`` stress DOFs (the current level is kept), or when the total
    estimator falls below ``eta_tol``. ``mesh`` overrides the initial mesh.
    """
    mesh = problem.initial_mesh() if mesh is None else mesh
    out = []
    for level in range(max_levels):
        res = solve_level(problem, mesh, space, level, quad_degree, threads, errors)
        if audit_prolongation and out and level <= 3 and space == "extended":
            prev = out[-1]
            prolong(prev.dofmap, prev.sigma.coeffs, res.dofmap)
        out.append(res)
        if max_dofs is not None and res.dofmap.n_stress >= max_dofs:
            break
        if eta_tol is not None and res.estimate.total <= eta_tol:
            break
        if level + 1 == max_levels:
            break
        marked = mark(res.estimate, theta)
        if len(marked) == 0:
            break
        mesh = refine(mesh, marked)
        if max_dofs is not None:
            n_next = build_dof_map(mesh, problem.space_kind(space, mesh)).n_stress
            if n_next > max_dofs:
                break
    return out


def uniform_loop(problem, space, levels, first=0, quad_degree=8, threads=1, errors=True):
    """Solve on levels ``first..levels``; level l is T0 refined uniformly l times."""
    from .mesh import uniform_refine

    if first < 0 or levels < first:
        raise ValueError("need 0 <= first <= levels")
    mesh = uniform_refine(problem.initial_mesh(), first) if first else problem.initial_mesh()
    out = []
    for level in range(first, levels + 1):
        if level > first:
            mesh = uniform_refine(mesh)
        out.append(solve_level(problem, mesh, space, level, quad_degree, threads, errors))
    return out
