from itertools import combinations
from math import ceil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_refinement, unit_square
from nestedhz.assembly import Compliance
from nestedhz.dofs import EXTENDED, build_dof_map, interpolate
from nestedhz.estimator import adapt_loop, estimate, mark, uniform_loop
from nestedhz.mesh import uniform_refine
from nestedhz.problems import problem_lshape, problem_manufactured_smooth


def test_constant_stress_hand_integral():
    """Zero Dirichlet data and constant sigma: only the boundary term
    h_K |e| (A sigma t.t)^2 survives."""
    m = uniform_refine(unit_square(), 1)
    dm = build_dof_map(m)
    A = Compliance(1.0, 1.0)
    s0 = np.array([1.0, 0.5, -2.0])
    c = interpolate(dm, lambda X: np.tile(s0, (len(X), 1)), tol=1e-12)
    est = estimate(dm, c, A)
    tau = A.apply(s0)
    expected = np.zeros(m.n_triangles)
    for e in np.nonzero(m.is_boundary_edge)[0]:
        t = m.edge_tangents[e]
        k = m.edge_tris[e, 0]
        tt = tau[0] * t[0] ** 2 + 2 * tau[1] * t[0] * t[1] + tau[2] * t[1] ** 2
        expected[k] += m.h[k] * m.edge_lengths[e] * tt**2
    assert np.allclose(est.eta2, expected, rtol=1e-12, atol=1e-15)


def test_scaling():
    m = random_refinement(unit_square(), 3)
    dm = build_dof_map(m, EXTENDED)
    c = np.random.default_rng(0).standard_normal(dm.n_stress)
    A = Compliance(1.0, 2.0)
    e1 = estimate(dm, c, A).eta2
    e3 = estimate(dm, 3.0 * c, A).eta2
    assert np.allclose(e3, 9.0 * e1, rtol=1e-12)


def test_totals_are_sums():
    p = problem_manufactured_smooth()
    res = uniform_loop(p, "original", 1, first=1, errors=False)[0]
    est = res.estimate
    assert np.isclose(est.total**2, est.eta2.sum() + est.osc_f2.sum() + est.osc_g2.sum())
    assert np.all(est.eta2 >= 0) and np.all(est.osc_f2 >= 0)


def test_wrong_coefficient_length():
    dm = build_dof_map(unit_square())
    with pytest.raises(ValueError):
        estimate(dm, np.zeros(3), Compliance(1.0, 1.0))


def test_interpolant_of_smooth_solution_converges():
    p = problem_manufactured_smooth()
    etas = []
    mesh = p.initial_mesh()
    for _ in range(3):
        mesh = uniform_refine(mesh)
        dm = build_dof_map(mesh)
        c = interpolate(dm, p.exact_sigma)
        est = estimate(dm, c, p.material(mesh), p.f, p.u_D_derivs, p.g)
        etas.append(np.sqrt(est.eta2_total))
    assert etas[1] < etas[0] / 1.5 and etas[2] < etas[1] / 1.5


def test_mark_small_theta_gives_single_largest():
    ind = np.array([0.1, 3.0, 0.5, 2.9])
    assert list(mark(ind, 1e-9)) == [1]


@pytest.mark.parametrize("n", [1, 2, 7, 10])
def test_mark_equal_indicators(n):
    assert len(mark(np.ones(n), 0.5)) == ceil(n / 2)


def test_mark_rejects_bad_theta():
    with pytest.raises(ValueError):
        mark(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        mark(np.ones(3), 1.0)


def test_mark_zero_indicators():
    assert len(mark(np.zeros(4), 0.5)) == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 10)), min_size=1, max_size=10), st.floats(0.05, 0.95))
def test_mark_is_minimal(ind, theta):
    ind = np.array(ind)
    total = ind.sum()
    if total <= 0:
        return
    chosen = mark(ind, theta)
    assert ind[chosen].sum() >= theta * total * (1 - 1e-12)
    # brute force: no smaller subset reaches the bulk
    for size in range(len(chosen)):
        best = max((ind[list(c)].sum() for c in combinations(range(len(ind)), size)), default=0.0)
        assert best < theta * total


def test_adapt_stops_at_initial_dof_count():
    p = problem_lshape()
    first = adapt_loop(p, "extended", max_levels=1, errors=False)[0]
    out = adapt_loop(p, "extended", max_levels=10, max_dofs=first.dofmap.n_stress, errors=False)
    assert len(out) == 1


@pytest.mark.parametrize("space", ["extended", "corner-relaxed"])
def test_adaptive_lshape_refines_towards_corner(space):
    p = problem_lshape()
    out = adapt_loop(p, space, theta=0.5, max_levels=8, errors=False, audit_prolongation=True)
    for r in out[3:]:
        # the smallest h_K is attained by an element touching the re-entrant corner
        at_origin = r.mesh.triangles_at(0)[0]
        assert r.mesh.h[at_origin].min() == r.mesh.h.min()
    assert out[-1].mesh.h[out[-1].mesh.triangles_at(0)[0]].max() <= out[0].mesh.h.max() / 2


def test_adaptive_smooth_estimator_decreases():
    p = problem_manufactured_smooth()
    out = adapt_loop(p, "extended", theta=0.5, max_levels=5, errors=False)
    eta = [np.sqrt(r.estimate.eta2_total) for r in out]
    assert all(b < a for a, b in zip(eta, eta[1:]))
