import math

import numpy as np
import pytest
from scipy.optimize import brentq

from nestedhz.estimator import solve_level
from nestedhz.mesh import uniform_refine
from nestedhz.problems import (
    COOK_CORNERS, LSHAPE_ALPHA, LSHAPE_OMEGA, PROBLEMS, compute_reference,
    convergence_table, error_norms, exact_lshape, get_problem, load_reference, observed_orders,
    problem_cook, problem_interface, problem_lshape, problem_manufactured_smooth, read_field,
    save_reference, singular_rule, write_field,
)
from nestedhz.quadrature import quad_edge, quad_triangle


def fd_divergence(sigma, X, h=1e-5):
    out = np.zeros((len(X), 2))
    for d, e in enumerate(np.eye(2)):
        ds = (sigma(X + h * e) - sigma(X - h * e)) / (2 * h)
        # div sigma_i = d_1 sigma_i1 + d_2 sigma_i2
        out[:, 0] += ds[:, [0, 1][d]]
        out[:, 1] += ds[:, [1, 2][d]]
    return out


def test_interface_exact_stress():
    p = problem_interface()
    s = p.exact_sigma(np.array([[0.3, 0.2], [0.7, 0.9]]))
    assert np.allclose(s, [[1, 0, 0], [10, 0, 0]])
    assert np.all(p.f(np.random.default_rng(0).random((5, 2))) == 0)
    # sigma = 2 mu eps(u) with lam = 0 on both sides
    m = p.initial_mesh()
    A = p.material(m)
    assert np.allclose(np.unique(A.mu), [0.5, 5.0]) and np.all(A.lam == 0)


def test_interface_split_line():
    p = problem_interface()
    m = uniform_refine(p.initial_mesh())
    splits = p.split_line(m)
    assert splits and all(abs(m.points[v][1] - 0.5) < 1e-12 and t == (1.0, 0.0) for v, t in splits)
    with pytest.raises(ValueError):
        problem_interface(n=3)


def test_lshape_exponent_solves_characteristic_equation():
    w = LSHAPE_OMEGA
    char = lambda a: math.sin(2 * a * w) + a * math.sin(2 * w)
    assert abs(char(LSHAPE_ALPHA)) < 1e-11
    assert abs(brentq(char, 0.5, 0.6, xtol=1e-15) - LSHAPE_ALPHA) < 1e-11


def test_lshape_equilibrium_and_boundary_data():
    p = problem_lshape()
    rng = np.random.default_rng(2)
    r = rng.uniform(0.2, 0.9, 20)
    phi = rng.uniform(-LSHAPE_OMEGA + 0.1, LSHAPE_OMEGA - 0.1, 20)
    X = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    div = fd_divergence(p.exact_sigma, X)
    scale = np.abs(p.exact_sigma(X)).max()
    assert np.abs(div).max() < 1e-4 * scale
    u, s = exact_lshape(r, phi)
    assert np.allclose(u, p.exact_u(X)) and np.allclose(s, p.exact_sigma(X))
    assert np.allclose(p.u_D(X), p.exact_u(X))


def test_lshape_legs_are_traction_free():
    p = problem_lshape()
    m = p.initial_mesh()
    s = np.linspace(0.05, 1.0, 15)
    for e in np.nonzero(m.edge_markers < 0)[0]:
        a, b = m.points[m.edges[e]]
        X = a + s[:, None] * (b - a)
        X = X[np.linalg.norm(X, axis=1) > 1e-3]
        n = m.edge_normals[e]
        S = p.exact_sigma(X)
        tn = np.column_stack([S[:, 0] * n[0] + S[:, 1] * n[1], S[:, 1] * n[0] + S[:, 2] * n[1]])
        assert np.abs(tn).max() < 1e-8 * np.abs(S).max()


def test_lshape_singular_at_origin():
    with pytest.raises(ValueError):
        exact_lshape(0.0, 0.0)


def test_cook_traction_data():
    p = problem_cook()
    X = np.array([[48.0, 50.0]])
    assert np.allclose(p.g(X, -2), [[0.0, 1.0]])
    assert np.allclose(p.g(X, -1), 0) and np.allclose(p.g(X, -3), 0)
    m = p.initial_mesh()
    for c, corner in zip(p.corners, COOK_CORNERS[1:3]):
        assert np.allclose(m.points[c], corner)
        markers = {int(m.edge_markers[e]) for e in range(m.n_edges)
                   if m.is_boundary_edge[e] and c in m.edges[e]}
        assert -2 in markers and len(markers) == 2
    assert p.exact_sigma is None and not p.has_reference


def test_smooth_global_balance():
    """int_Omega f = oint sigma n for the manufactured solution."""
    p = problem_manufactured_smooth()
    m = uniform_refine(p.initial_mesh(), 2)
    q = quad_triangle(16)
    X = np.einsum("qi,kid->kqd", q.points, m.coords()).reshape(-1, 2)
    F = p.f(X).reshape(m.n_triangles, -1, 2)
    vol = np.einsum("k,q,kqc->c", 2 * m.areas, q.weights, F)
    qe = quad_edge(16)
    bnd = 0.0
    for e in np.nonzero(m.is_boundary_edge)[0]:
        a, b = m.points[m.edges[e]]
        Xe = a + qe.points[:, None] * (b - a)
        n = m.edge_normals[e] * m.outward_sign[e]
        S = p.exact_sigma(Xe)
        tn = np.column_stack([S[:, 0] * n[0] + S[:, 1] * n[1], S[:, 1] * n[0] + S[:, 2] * n[1]])
        bnd = bnd + m.edge_lengths[e] * qe.weights @ tn
    assert np.allclose(vol, bnd, atol=1e-10)
    X = np.random.default_rng(1).random((10, 2))
    assert np.allclose(fd_divergence(p.exact_sigma, X), p.f(X), atol=1e-6)


def test_boundary_partition_for_all_problems():
    for name in PROBLEMS:
        p = get_problem(name)
        m = p.initial_mesh()
        assert np.all(m.boundary_markers != 0)
        assert p.dirichlet_markers, name


def test_unknown_problem_and_space():
    with pytest.raises(ValueError):
        get_problem("bridge")
    p = problem_manufactured_smooth()
    with pytest.raises(ValueError):
        p.space_kind("corner-relaxed", p.initial_mesh())
    with pytest.raises(ValueError):
        p.space_kind("mixed", p.initial_mesh())


@pytest.mark.parametrize("power", [1 - LSHAPE_ALPHA, 2 - 2 * LSHAPE_ALPHA])
def test_singular_rule_integrates_radial_power(power):
    """int over the reference triangle of r^-power, r the distance to vertex 0,
    against the polar form int_0^{pi/2} (cos + sin)^(power - 2) / (2 - power)."""
    phi = quad_edge(30)
    t = phi.points * np.pi / 2
    exact = np.pi / 2 * np.sum(phi.weights * (np.cos(t) + np.sin(t)) ** (power - 2)) / (2 - power)
    for degree, tol in ((12, 1e-6), (20, 1e-9)):
        bary, w = singular_rule(0, degree, 40)
        r = np.linalg.norm(bary[:, 1:], axis=1)
        assert abs(np.sum(w * r**-power) - exact) < tol * exact
    assert abs(np.sum(w) - 0.5) < 1e-14


def test_singular_quadrature_converged():
    p = problem_lshape()
    res = solve_level(p, uniform_refine(p.initial_mesh()), "corner-relaxed", errors=False)
    a = error_norms(p, res.sigma, res.u, depth=20)
    b = error_norms(p, res.sigma, res.u, depth=40, degree=16)
    for key in ("error_A", "error_Hdiv", "error_u"):
        assert abs(a[key] - b[key]) <= 1e-4 * b[key]


def test_observed_orders():
    assert np.allclose(observed_orders([4.0, 1.0]), [2.0])
    assert np.allclose(observed_orders([1.0, 0.5], dofs=[10, 40]), [0.5])
    with pytest.raises(ValueError):
        observed_orders([1.0])


def test_convergence_table():
    rows = [{"error_A": 1.0, "total_dofs": 10}, {"error_A": 0.125, "total_dofs": 40}]
    out = convergence_table(rows, keys=("error_A",))
    assert math.isnan(out[0]["order_error_A"]) and np.isclose(out[1]["order_error_A"], 3.0)
    out = convergence_table(rows, keys=("error_A",), adaptive=True)
    assert np.isclose(out[1]["order_error_A"], 1.5)


def test_field_round_trip(tmp_path):
    vals = np.random.default_rng(0).standard_normal(17) * 1e-7
    for name in ("f.field", "f.field.gz"):
        write_field(tmp_path / name, vals)
        assert np.array_equal(read_field(tmp_path / name), vals)
    (tmp_path / "bad.field").write_text("field v2 1\n0.0\n")
    with pytest.raises(ValueError):
        read_field(tmp_path / "bad.field")
    (tmp_path / "short.field").write_text("field v1 3\n0.0\n1.0\n")
    with pytest.raises(ValueError):
        read_field(tmp_path / "short.field")


def test_reference_round_trip(tmp_path):
    p = problem_cook()
    ref = compute_reference(p, level=1)
    save_reference(ref, tmp_path / "ref")
    back = load_reference(tmp_path / "ref", p)
    assert np.array_equal(back.stress, ref.stress)
    assert np.array_equal(back.displacement, ref.displacement)
    assert back.space == ref.space


def test_reference_errors_vanish_for_the_reference_itself():
    p = problem_cook()
    ref = compute_reference(p, level=1)
    q = problem_cook(reference=ref)
    res = solve_level(q, uniform_refine(q.initial_mesh()), "corner-relaxed")
    assert res.errors["error_A"] < 1e-9
    coarse = solve_level(q, q.initial_mesh(), "corner-relaxed")
    assert coarse.errors["error_A"] > 1e-4
