"""Quadrature rules on the reference triangle and on edges.

Triangle rules are collapsed (Duffy) Gauss--Jacobi products: ``n`` points per
direction integrate total degree ``2n - 1`` exactly. They are not symmetric,
which does not matter for assembly.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_DEGREE = 30


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights of a quadrature rule.

    For triangles ``points`` holds barycentric coordinates (npts, 3) and the
    weights sum to 1/2, the area of the reference triangle. For edges
    ``points`` holds the parameter in [0, 1] and the weights sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quad_triangle(degree: int) -> QuadratureRule:
    if degree < 0 or degree > MAX_TRIANGLE_DEGREE:
        raise ValueError(f"unsupported triangle quadrature degree {degree}")
    n = max(1, (degree + 2) // 2)
    s, ws = roots_jacobi(n, 1.0, 0.0)
    u = (1.0 + s) / 2.0
    wu = ws / 4.0
    g, wg = np.polynomial.legendre.leggauss(n)
    v = (1.0 + g) / 2.0
    wv = wg / 2.0
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu.ravel()
    y = ((1.0 - uu) * vv).ravel()
    w = np.outer(wu, wv).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    bary.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(bary, w, degree)


@lru_cache(maxsize=None)
def quad_edge(degree: int) -> QuadratureRule:
    if degree < 0:
        raise ValueError(f"unsupported edge quadrature degree {degree}")
    n = max(1, (degree + 2) // 2)
    g, wg = np.polynomial.legendre.leggauss(n)
    pts = (1.0 + g) / 2.0
    w = wg / 2.0
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


def gauss_points(n: int) -> QuadratureRule:
    """``n``-point Gauss--Legendre rule on [0, 1]."""
    return quad_edge(2 * n - 1)
