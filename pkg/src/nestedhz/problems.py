"""Benchmark problems, exact solutions, error norms and convergence tables.

Sign convention: ``div sigma = f``. Boundary markers are positive on
Dirichlet segments and negative on traction segments.
"""
import gzip
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .assembly import Compliance
from .dofs import EXTENDED, ORIGINAL, SpaceKind, _bary_in, build_dof_map
from .mesh import Mesh, read_mesh, uniform_refine, write_mesh
from .quadrature import quad_triangle
from .shapes import FROBENIUS_WEIGHTS, lagrange_p2, lagrange_p3, matvec, triangle_geometry

SPACES = ("original", "extended", "corner-relaxed", "extended-manual")

LSHAPE_ALPHA = 0.544483736782
LSHAPE_OMEGA = 3.0 * math.pi / 4.0
STEEL_LIKE = dict(E=1e5, nu=0.499)


@dataclass
class ProblemSpec:
    name: str
    points: np.ndarray
    triangles: np.ndarray
    segments: np.ndarray
    markers: np.ndarray
    tensor: Compliance
    f: Optional[Callable] = None
    u_D: Optional[Callable] = None
    u_D_derivs: Optional[Callable] = None
    g: Optional[Callable] = None
    exact_sigma: Optional[Callable] = None
    exact_u: Optional[Callable] = None
    corners: tuple = ()
    split_line: Optional[Callable] = None  # mesh -> ((vertex, t), ...)
    element_material: Optional[Callable] = None  # mesh -> Compliance
    singular_point: Optional[np.ndarray] = None
    reference: Optional[object] = None  # ReferenceSolution
    default_space: str = "original"
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.markers)
        if np.any(m == 0):
            raise ValueError("every boundary segment must be Dirichlet (>0) or traction (<0)")

    @property
    def dirichlet_markers(self):
        return sorted({int(m) for m in self.markers if m > 0})

    @property
    def neumann_markers(self):
        return sorted({int(m) for m in self.markers if m < 0})

    def initial_mesh(self):
        if not hasattr(self, "_mesh0"):
            self._mesh0 = Mesh.from_arrays(self.points, self.triangles, self.segments, self.markers)
        return self._mesh0

    def material(self, mesh):
        if self.element_material is not None:
            return self.element_material(mesh)
        return self.tensor

    @property
    def has_reference(self):
        return self.exact_sigma is not None or self.reference is not None

    def space_kind(self, space, mesh):
        if isinstance(space, SpaceKind):
            return space
        if space == "original":
            return ORIGINAL
        if space == "extended":
            return EXTENDED
        if space == "corner-relaxed":
            if not self.corners:
                raise ValueError(f"problem {self.name!r} has no corners to relax")
            return SpaceKind(corners=tuple(self.corners))
        if space == "extended+corner":
            return SpaceKind(extended=True, corners=tuple(self.corners))
        if space == "extended-manual":
            if self.split_line is None:
                raise ValueError(f"problem {self.name!r} defines no manual split vertices")
            return SpaceKind(manual_splits=tuple(self.split_line(mesh)))
        raise ValueError(f"unknown space {space!r}; choose from {', '.join(SPACES)}")


# --------------------------------------------------------------------------
# symbolic helpers

def _columns(fns, X, ncomp):
    X = np.atleast_2d(X)
    out = np.empty((len(X), ncomp))
    for i, fn in enumerate(fns):
        out[:, i] = np.broadcast_to(np.asarray(fn(X[:, 0], X[:, 1]), dtype=float), len(X))
    return out


def symbolic_fields(u_expr, lam, mu, x, y):
    """Numerical evaluators for u, its derivatives, sigma = C eps(u) and
    f = div sigma from a symbolic displacement."""
    X = (x, y)
    lam = sp.nsimplify(lam) if isinstance(lam, int) else lam
    grad = [[sp.diff(u_expr[i], X[j]) for j in range(2)] for i in range(2)]
    hess = [[[sp.diff(grad[i][j], X[k]) for k in range(2)] for j in range(2)] for i in range(2)]
    eps = [[(grad[i][j] + grad[j][i]) / 2 for j in range(2)] for i in range(2)]
    tr = eps[0][0] + eps[1][1]
    sig = [[2 * mu * eps[i][j] + (lam * tr if i == j else 0) for j in range(2)] for i in range(2)]
    f = [sp.diff(sig[i][0], x) + sp.diff(sig[i][1], y) for i in range(2)]
    lam_ = lambda e: sp.lambdify((x, y), e, "numpy")
    fu = [lam_(e) for e in u_expr]
    fg = [lam_(grad[i][j]) for i in range(2) for j in range(2)]
    fh = [lam_(hess[i][j][k]) for i in range(2) for j in range(2) for k in range(2)]
    fs = [lam_(sig[0][0]), lam_(sig[0][1]), lam_(sig[1][1])]
    ff = [lam_(e) for e in f]

    def u(X):
        return _columns(fu, X, 2)

    def derivs(X):
        n = len(np.atleast_2d(X))
        return _columns(fg, X, 4).reshape(n, 2, 2), _columns(fh, X, 8).reshape(n, 2, 2, 2)

    def sigma(X):
        return _columns(fs, X, 3)

    def force(X):
        return _columns(ff, X, 2)

    return u, derivs, sigma, force


def _square_grid(n, x0=0.0, y0=0.0, size=1.0):
    """n x n squares, each cut by the diagonal pointing to the square's centre."""
    s = np.linspace(0.0, 1.0, n + 1)
    pts = np.array([[x0 + size * a, y0 + size * b] for b in s for a in s])
    tris = []
    vid = lambda i, j: j * (n + 1) + i
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            # diagonal through the corner nearest to the centre of the grid
            if (i < n / 2) == (j < n / 2):
                tris += [[v00, v10, v11], [v00, v11, v01]]
            else:
                tris += [[v00, v10, v01], [v10, v11, v01]]
    return pts, np.array(tris)


def _boundary_segments(points, tris):
    edges = {}
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return np.array(sorted(k for k, c in edges.items() if c == 1))


# --------------------------------------------------------------------------
# problems

def problem_manufactured_smooth(n=2, lam=1.0, mu=1.0):
    """Unit square, Dirichlet everywhere, smooth trigonometric displacement."""
    x, y = sp.symbols("x y", real=True)
    u_expr = [sp.sin(sp.pi * x) * sp.sin(sp.pi * y) + x * y, sp.cos(sp.pi * x) * sp.sin(sp.pi * y / 2) - x**2]
    u, derivs, sigma, f = symbolic_fields(u_expr, lam, mu, x, y)
    pts, tris = _square_grid(n)
    seg = _boundary_segments(pts, tris)
    return ProblemSpec("smooth", pts, tris, seg, np.ones(len(seg), dtype=int), Compliance(lam, mu),
                       f=f, u_D=u, u_D_derivs=derivs, exact_sigma=sigma, exact_u=u)


def problem_patch(n=2, lam=1.3, mu=0.7, traction=True):
    """Quartic displacement: the stress is a global cubic, so the discrete
    stress must be exact. Traction data on the top and left edges."""
    x, y = sp.symbols("x y", real=True)
    u_expr = [x**4 + x * y**3 - 2 * y**2 * x, y**4 - 3 * x**2 * y**2 + x * y]
    u, derivs, sigma, f = symbolic_fields(u_expr, lam, mu, x, y)
    pts, tris = _square_grid(n)
    seg = _boundary_segments(pts, tris)
    mid = pts[seg].mean(axis=1)
    markers = np.ones(len(seg), dtype=int)
    if traction:
        markers[np.isclose(mid[:, 1], 1.0)] = -1
        markers[np.isclose(mid[:, 0], 0.0)] = -2
    normals = {-1: np.array([0.0, 1.0]), -2: np.array([-1.0, 0.0])}

    def g(X, marker):
        return matvec(sigma(X), normals[marker])

    return ProblemSpec("patch", pts, tris, seg, markers, Compliance(lam, mu), f=f, u_D=u,
                       u_D_derivs=derivs, g=g if traction else None, exact_sigma=sigma, exact_u=u)


def problem_interface(n=2, mu_below=0.5, mu_above=5.0):
    """Piecewise constant stress diag(1, 0) below x2 = 1/2 and diag(10, 0)
    above, from the linear displacement u = (x1, 0) and a two-material
    body with lam = 0."""
    if n % 2:
        raise ValueError("the grid must resolve the line x2 = 0.5")
    pts, tris = _square_grid(n)
    seg = _boundary_segments(pts, tris)
    s_below, s_above = 2.0 * mu_below, 2.0 * mu_above

    def sigma(X):
        X = np.atleast_2d(X)
        out = np.zeros((len(X), 3))
        out[:, 0] = np.where(X[:, 1] > 0.5, s_above, s_below)
        return out

    def u(X):
        X = np.atleast_2d(X)
        return np.column_stack([X[:, 0], np.zeros(len(X))])

    def derivs(X):
        n_ = len(np.atleast_2d(X))
        G = np.zeros((n_, 2, 2))
        G[:, 0, 0] = 1.0
        return G, np.zeros((n_, 2, 2, 2))

    def material(mesh):
        above = mesh.centroids[:, 1] > 0.5
        return Compliance(np.zeros(mesh.n_triangles), np.where(above, mu_above, mu_below))

    def split_line(mesh):
        on = np.nonzero(np.abs(mesh.points[:, 1] - 0.5) < 1e-12)[0]
        return tuple((int(v), (1.0, 0.0)) for v in on)

    return ProblemSpec("interface", pts, tris, seg, np.ones(len(seg), dtype=int), Compliance(0.0, mu_below),
                       f=lambda X: np.zeros((len(np.atleast_2d(X)), 2)), u_D=u, u_D_derivs=derivs,
                       exact_sigma=sigma, exact_u=u, split_line=split_line, element_material=material,
                       default_space="extended-manual")


def lame(E, nu, plane="strain"):
    t = Compliance.from_young(E, nu, plane)
    return t.lam, t.mu


def lshape_constants(E=1e5, nu=0.499, plane="strain"):
    lam, mu = lame(E, nu, plane)
    a, w = LSHAPE_ALPHA, LSHAPE_OMEGA
    C1 = -math.cos((a + 1) * w) / math.cos((a - 1) * w)
    C2 = 2 * (lam + 2 * mu) / (lam + mu)
    return dict(lam=lam, mu=mu, alpha=a, omega=w, C1=C1, C2=C2)


@lru_cache(maxsize=None)
def _lshape_symbolic(E, nu, plane):
    c = lshape_constants(E, nu, plane)
    x, y = sp.symbols("x y", real=True)
    r = sp.sqrt(x**2 + y**2)
    ph = sp.atan2(y, x)
    a, mu, C1, C2 = c["alpha"], c["mu"], c["C1"], c["C2"]
    ur = r**a / (2 * mu) * (-(a + 1) * sp.cos((a + 1) * ph) + (C2 - a - 1) * C1 * sp.cos((a - 1) * ph))
    up = r**a / (2 * mu) * ((a + 1) * sp.sin((a + 1) * ph) + (C2 + a - 1) * C1 * sp.sin((a - 1) * ph))
    u_expr = [ur * sp.cos(ph) - up * sp.sin(ph), ur * sp.sin(ph) + up * sp.cos(ph)]
    return symbolic_fields(u_expr, c["lam"], c["mu"], x, y)


def exact_lshape(r, phi, E=1e5, nu=0.499, plane="strain"):
    """Displacement (n, 2) and stress (n, 3) at polar coordinates."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if np.any(r <= 0.0):
        raise ValueError("the stress is singular at the re-entrant corner (r = 0)")
    X = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    u, _, sigma, _ = _lshape_symbolic(E, nu, plane)
    return u(X), sigma(X)


def problem_lshape(E=1e5, nu=0.499, plane="strain"):
    """Rotated L-shaped domain with the re-entrant corner at the origin; the
    interior is -3pi/4 < phi < 3pi/4. Traction-free legs meet at the origin,
    Dirichlet data elsewhere from the exact singular solution."""
    lam, mu = lame(E, nu, plane)
    u, derivs, sigma, _ = _lshape_symbolic(E, nu, plane)
    c, s = math.cos(-LSHAPE_OMEGA), math.sin(-LSHAPE_OMEGA)
    R = np.array([[c, -s], [s, c]])
    ring = np.array([[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1]], dtype=float)
    pts = np.vstack([[0.0, 0.0], ring @ R.T])
    tris = np.array([[0, i, i + 1] for i in range(1, 7)])
    seg = np.array([[0, 1], [0, 7]] + [[i, i + 1] for i in range(1, 7)])
    markers = np.array([-1, -2] + [1] * 6)

    def zero(X, marker=None):
        return np.zeros((len(np.atleast_2d(X)), 2))

    return ProblemSpec("lshape", pts, tris, seg, markers, Compliance(lam, mu), f=zero, u_D=u,
                       u_D_derivs=derivs, g=zero, exact_sigma=sigma, exact_u=u, corners=(0,),
                       singular_point=np.zeros(2), default_space="corner-relaxed")


COOK_CORNERS = np.array([[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]])


def problem_cook(E=1e5, nu=0.499, plane="strain", reference=None):
    """Cook's membrane: clamped left edge, upward unit traction on the right
    edge, traction free elsewhere. The two right corners carry inconsistent
    traction data."""
    lam, mu = lame(E, nu, plane)
    P00, P10, P11, P01 = COOK_CORNERS
    s = np.array([0.0, 0.5, 1.0])
    grid = np.array([(1 - a) * (1 - b) * P00 + a * (1 - b) * P10 + a * b * P11 + (1 - a) * b * P01
                     for b in s for a in s])
    _, tris = _square_grid(2)
    seg = _boundary_segments(grid, tris)
    mid = grid[seg].mean(axis=1)
    markers = np.empty(len(seg), dtype=int)
    left = np.isclose(mid[:, 0], 0.0)
    right = np.isclose(mid[:, 0], 48.0)
    top = ~left & ~right & (mid[:, 1] > 40.0 + mid[:, 0] * 0.4)
    markers[:] = -1  # bottom
    markers[left] = 1
    markers[right] = -2
    markers[top] = -3
    corners = tuple(int(np.argmin(np.linalg.norm(grid - p, axis=1))) for p in (P10, P11))

    def g(X, marker):
        X = np.atleast_2d(X)
        out = np.zeros((len(X), 2))
        if marker == -2:
            out[:, 1] = 1.0
        return out

    def zero(X):
        return np.zeros((len(np.atleast_2d(X)), 2))

    return ProblemSpec("cook", grid, tris, seg, markers, Compliance(lam, mu), f=zero, u_D=zero,
                       g=g, corners=corners, reference=reference, default_space="corner-relaxed")


PROBLEMS = {
    "smooth": problem_manufactured_smooth,
    "patch": problem_patch,
    "interface": problem_interface,
    "lshape": problem_lshape,
    "cook": problem_cook,
}


def get_problem(name, **kw):
    try:
        return PROBLEMS[name](**kw)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None


# --------------------------------------------------------------------------
# quadrature with a point singularity

def singular_rule(singular_vertex, degree=12, depth=20):
    """Barycentric points and weights (summing to 1/2) on the reference
    triangle, graded geometrically towards one vertex."""
    q = quad_triangle(degree)
    P = np.eye(3)[singular_vertex]
    A = np.eye(3)[(singular_vertex + 1) % 3]
    B = np.eye(3)[(singular_vertex + 2) % 3]
    pts, wts = [], []
    scale = 1.0

    def put(a, b, c, area_ratio):
        pts.append(q.points @ np.vstack([a, b, c]))
        wts.append(q.weights * area_ratio)

    for _ in range(depth):
        M1, M2 = (P + A) / 2, (P + B) / 2
        # trapezoid M1 A B M2 covers 3/4 of the current triangle
        put(M1, A, B, scale * 0.5)
        put(M1, B, M2, scale * 0.25)
        A, B = M1, M2
        scale *= 0.25
    put(P, A, B, scale)
    return np.vstack(pts), np.concatenate(wts)


def element_quadrature(mesh, degree=12, singular_point=None, depth=20):
    """Element ids, barycentric points and physical weights covering all
    elements; elements touching ``singular_point`` get a graded rule."""
    q = quad_triangle(degree)
    nT = mesh.n_triangles
    nq = len(q.weights)
    tris = np.repeat(np.arange(nT), nq)
    bary = np.tile(q.points, (nT, 1))
    w = 2.0 * np.repeat(mesh.areas, nq) * np.tile(q.weights, nT)
    if singular_point is None:
        return tris, bary, w
    hit = np.linalg.norm(mesh.points[mesh.triangles] - np.asarray(singular_point), axis=2) < 1e-12
    ks, locs = np.nonzero(hit)
    if len(ks) == 0:
        return tris, bary, w
    keep = ~np.isin(tris, ks)
    T, Bc, W = [tris[keep]], [bary[keep]], [w[keep]]
    for k, loc in zip(ks, locs):
        p, ww = singular_rule(loc, degree, depth)
        T.append(np.full(len(ww), k))
        Bc.append(p)
        W.append(2.0 * mesh.areas[k] * ww)
    return np.concatenate(T), np.vstack(Bc), np.concatenate(W)


# --------------------------------------------------------------------------
# error norms

def _stress_at(local, g_lambda, tris, bary):
    phi, dphi, _ = lagrange_p3(bary)
    C = local[tris]
    val = np.einsum("pa,paj->pj", phi, C)
    grad_phi = np.einsum("pai,pid->pad", dphi, g_lambda[tris])
    div = np.stack([np.einsum("pa,pa->p", C[..., 0], grad_phi[..., 0]) + np.einsum("pa,pa->p", C[..., 1], grad_phi[..., 1]),
                    np.einsum("pa,pa->p", C[..., 1], grad_phi[..., 0]) + np.einsum("pa,pa->p", C[..., 2], grad_phi[..., 1])],
                   axis=-1)
    return val, div


def _disp_at(ulocal, tris, bary):
    psi, _ = lagrange_p2(bary)
    return np.einsum("pb,pbc->pc", psi, ulocal[tris])


def _norms(tensor, tris, w, dsig, ddiv, du):
    G = tensor.matrix(tris)
    if G.ndim == 2:
        eA = np.einsum("pi,ij,pj->p", dsig, G, dsig)
    else:
        eA = np.einsum("pi,pij,pj->p", dsig, G, dsig)
    e0 = np.sum(FROBENIUS_WEIGHTS * dsig**2, axis=1)
    return {
        "error_A": float(np.sqrt(max(np.sum(w * eA), 0.0))),
        "error_Hdiv": float(np.sqrt(np.sum(w * (e0 + np.sum(ddiv**2, axis=1))))),
        "error_u": float(np.sqrt(np.sum(w * np.sum(du**2, axis=1)))),
        "error_L2": float(np.sqrt(np.sum(w * e0))),
        "error_div": float(np.sqrt(np.sum(w * np.sum(ddiv**2, axis=1)))),
    }


def error_norms(problem, sigma, u, tensor=None, degree=12, depth=20):
    """||sigma - sigma_h||_A, ||sigma - sigma_h||_Hdiv and ||u - u_h||_0.

    Uses the exact solution when the problem has one and otherwise the
    problem's reference solution.
    """
    if problem.exact_sigma is None:
        if problem.reference is None:
            raise ValueError(f"problem {problem.name!r} has neither an exact nor a reference solution")
        return reference_errors(problem.reference, sigma, u, tensor or problem.tensor, degree)
    mesh = sigma.dofmap.mesh
    tensor = tensor or problem.material(mesh)
    tris, bary, w = element_quadrature(mesh, degree, problem.singular_point, depth)
    X = np.einsum("pi,pid->pd", bary, mesh.coords(tris))
    _, g_lambda = triangle_geometry(mesh.coords())
    val, div = _stress_at(sigma.local(), g_lambda, tris, bary)
    fx = problem.f(X) if problem.f is not None else np.zeros((len(X), 2))
    uh = _disp_at(u.local(), tris, bary)
    return _norms(tensor, tris, w, problem.exact_sigma(X) - val, fx - div, problem.exact_u(X) - uh)


# --------------------------------------------------------------------------
# reference solutions

@dataclass
class ReferenceSolution:
    """A fine discrete solution used in place of an exact one."""

    mesh: Mesh
    space: SpaceKind
    stress: np.ndarray
    displacement: np.ndarray

    @property
    def dofmap(self):
        if not hasattr(self, "_dm"):
            self._dm = build_dof_map(self.mesh, self.space)
        return self._dm


def _locate_nested(coarse, fine):
    """Coarse triangle containing each fine triangle, or -1 where a fine
    triangle straddles several coarse ones."""
    try:
        return fine.ancestors_in(coarse)
    except ValueError:
        pass
    anc, _ = coarse.locate(fine.centroids)
    if np.any(anc < 0):
        raise ValueError("reference mesh does not cover the coarse mesh")
    verts = fine.coords()
    inside = np.ones(fine.n_triangles, dtype=bool)
    for i in range(3):
        b = _bary_in(coarse.coords(anc), verts[:, i])
        inside &= np.all(b >= -1e-9, axis=1)
    return np.where(inside, anc, -1)


def reference_errors(ref: ReferenceSolution, sigma, u, tensor, degree=12):
    """Errors against a reference on a finer mesh.

    Integrals run over the reference mesh; the coarse fields are evaluated
    in the coarse triangle containing each fine triangle (point location
    per quadrature point where the meshes are not nested).
    """
    fine = ref.mesh
    coarse = sigma.dofmap.mesh
    anc = _locate_nested(coarse, fine)
    tris, bary, w = element_quadrature(fine, degree)
    X = np.einsum("pi,pid->pd", bary, fine.coords(tris))
    _, gf = triangle_geometry(fine.coords())
    _, gc = triangle_geometry(coarse.coords())
    s_ref, d_ref = _stress_at(ref.dofmap.local(ref.stress), gf, tris, bary)
    u_ref = _disp_at(ref.displacement.reshape(-1, 6, 2), tris, bary)
    ct = anc[tris]
    loose = ct < 0
    if np.any(loose):
        ct[loose], _ = coarse.locate(X[loose])
        if np.any(ct < 0):
            raise ValueError("reference mesh does not cover the coarse mesh")
    cb = _bary_in(coarse.coords(ct), X)
    s_h, d_h = _stress_at(sigma.local(), gc, ct, cb)
    u_h = _disp_at(u.local(), ct, cb)
    return _norms(tensor, ct, w, s_ref - s_h, d_ref - d_h, u_ref - u_h)


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t")
    return open(path, mode)


def write_field(path, values):
    """Text field file: header ``field v1 <count>``, one value per line
    (gzip-compressed when ``path`` ends in .gz)."""
    values = np.asarray(values, dtype=float).ravel()
    with _open(path, "w") as fh:
        fh.write(f"field v1 {len(values)}\n")
        fh.write("\n".join(repr(float(v)) for v in values))
        fh.write("\n")


def read_field(path):
    with _open(path, "r") as fh:
        head = fh.readline().split()
        if head[:2] != ["field", "v1"] or len(head) != 3:
            raise ValueError(f"{path}: not a field v1 file")
        n = int(head[2])
        vals = np.loadtxt(fh, ndmin=1)
    if len(vals) != n:
        raise ValueError(f"{path}: header announces {n} values, found {len(vals)}")
    return vals


def save_reference(ref: ReferenceSolution, stem):
    """Write ``<stem>.mesh`` and ``<stem>.field.gz`` (stress then displacement)."""
    write_mesh(ref.mesh, f"{stem}.mesh")
    write_field(f"{stem}.field.gz", np.concatenate([ref.stress, ref.displacement]))


def load_reference(stem, problem, space="corner-relaxed"):
    """Read a reference written by :func:`save_reference`; corners are
    matched to the problem's corners by position."""
    mesh = read_mesh(f"{stem}.mesh")
    corners = tuple(int(np.argmin(np.linalg.norm(mesh.points - problem.points[c], axis=1)))
                    for c in problem.corners)
    kind = SpaceKind(corners=corners) if space == "corner-relaxed" else problem.space_kind(space, mesh)
    ref = ReferenceSolution(mesh, kind, np.zeros(0), np.zeros(0))
    path = f"{stem}.field.gz" if os.path.exists(f"{stem}.field.gz") else f"{stem}.field"
    vals = read_field(path)
    if len(vals) != ref.dofmap.n_total:
        raise ValueError("reference field does not match the reference mesh")
    ns = ref.dofmap.n_stress
    ref.stress, ref.displacement = vals[:ns], vals[ns:]
    return ref


def compute_reference(problem, level=4, max_dofs=None, theta=0.5, space="corner-relaxed"):
    """Discrete reference: ``level`` uniform refinements of T0, then
    adaptive refinement until the next mesh would exceed ``max_dofs``
    stress DOFs (``None`` skips the adaptive phase)."""
    from .estimator import adapt_loop, solve_level

    mesh = uniform_refine(problem.initial_mesh(), level)
    if max_dofs is None:
        res = solve_level(problem, mesh, space, level, errors=False)
    else:
        res = adapt_loop(problem, space, theta=theta, max_levels=100, max_dofs=max_dofs,
                         mesh=mesh, errors=False)[-1]
    return ReferenceSolution(res.mesh, res.dofmap.kind, res.sigma.coeffs, res.u.coeffs)


COOK_REFERENCE = os.path.join(os.path.dirname(__file__), "data", "cook_reference")


def cook_reference(stem=None):
    """The shipped self-generated Cook reference (see ``scripts`` in the
    README for how it was produced)."""
    return load_reference(stem or COOK_REFERENCE, problem_cook())


# --------------------------------------------------------------------------
# tables

def observed_orders(errors, dofs=None):
    """Orders between consecutive levels: log2 ratios for uniform halving,
    or ``-log(e2/e1) / log(N2/N1)`` against DOF counts."""
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("need at least two levels")
    if dofs is None:
        return np.log(e[:-1] / e[1:]) / np.log(2.0)
    n = np.asarray(dofs, dtype=float)
    return -np.log(e[1:] / e[:-1]) / np.log(n[1:] / n[:-1])


def convergence_table(rows, keys=("error_A", "error_Hdiv", "error_u", "eta"), adaptive=False):
    """Add ``order_<key>`` columns (NaN on the first row) to level rows."""
    rows = [dict(r) for r in rows]
    if len(rows) < 2:
        raise ValueError("need at least two levels")
    dofs = [r["total_dofs"] for r in rows] if adaptive else None
    for key in keys:
        vals = [r.get(key, np.nan) for r in rows]
        if not np.all(np.isfinite(vals)) or np.any(np.asarray(vals) <= 0):
            orders = [np.nan] * (len(rows) - 1)
        else:
            orders = observed_orders(vals, dofs)
        rows[0][f"order_{key}"] = np.nan
        for r, o in zip(rows[1:], orders):
            r[f"order_{key}"] = float(o)
    return rows
