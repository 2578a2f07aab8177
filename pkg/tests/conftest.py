import numpy as np
import pytest

from nestedhz.mesh import Mesh, refine

ACCEPTANCE = {}


def unit_square(markers=(1, 1, 1, 1)):
    pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    tris = [[0, 1, 2], [0, 2, 3]]
    seg = [[0, 1], [1, 2], [2, 3], [0, 3]]
    return Mesh.from_arrays(pts, tris, seg, list(markers))


def random_refinement(mesh, seed, steps=3, fraction=0.3):
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        k = max(1, int(fraction * mesh.n_triangles))
        mesh = refine(mesh, rng.choice(mesh.n_triangles, k, replace=False))
    return mesh


def random_points(mesh, n, rng):
    """Uniform random points inside random triangles, with their triangle ids."""
    tris = rng.integers(0, mesh.n_triangles, n)
    b = rng.dirichlet(np.ones(3), n)
    return np.einsum("pi,pid->pd", b, mesh.coords(tris)), tris


@pytest.fixture
def square():
    return unit_square()


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
