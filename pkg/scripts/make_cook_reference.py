"""Regenerate the shipped Cook reference solution.

Four uniform refinements of the initial mesh, then adaptive refinement with
theta = 0.5 in the corner-relaxed space until the stress DOF budget is hit.
Takes about two minutes on one core.

    python scripts/make_cook_reference.py [max_stress_dofs] [output_stem]
"""
import logging
import sys
import time

from nestedhz.problems import COOK_REFERENCE, compute_reference, problem_cook, save_reference


def main(argv):
    max_dofs = int(argv[0]) if argv else 150_000
    stem = argv[1] if len(argv) > 1 else COOK_REFERENCE
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    t0 = time.perf_counter()
    ref = compute_reference(problem_cook(), level=4, max_dofs=max_dofs, theta=0.5)
    save_reference(ref, stem)
    print(f"{ref.mesh.n_triangles} triangles, {ref.dofmap.n_stress} stress dofs, "
          f"{time.perf_counter() - t0:.1f}s -> {stem}")


if __name__ == "__main__":
    main(sys.argv[1:])
