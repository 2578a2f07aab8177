"""Nested Hu-Zhang mixed finite elements for linear elasticity.

Cubic symmetric stresses with discontinuous quadratic displacements on
newest-vertex-bisection meshes, an extended stress space that stays nested
under refinement, relaxed corner bases, a residual estimator and an
adaptive loop.
"""
from .assembly import Compliance, SolveError, assemble, solve
from .dofs import EXTENDED, ORIGINAL, SpaceKind, build_dof_map, interpolate, prolong
from .estimator import adapt_loop, estimate, mark, solve_level, uniform_loop
from .mesh import Mesh, MeshError, read_mesh, refine, uniform_refine, write_mesh
from .problems import get_problem

__version__ = "0.1.0"
