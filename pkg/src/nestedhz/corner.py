"""Relaxed vertex bases at boundary corners.

Around a corner ``x_c`` the triangles ``K_1 .. K_m`` are ordered from the
boundary edge ``E_0 = e_+`` to ``E_m = e_-``; ``E_i = K_i ∩ K_{i+1}``. A
relaxed function takes an independent symmetric matrix on every ``K_i`` at
``x_c`` subject to continuity of the normal component across each ``E_i``,
which leaves ``m + 2`` functions:

* tau_1, tau_2: ``Sperp_{E0,1|2} + c S_{E0}`` on K_1, ``d S_{E2}`` on K_2
* tau_3, tau_4: ``c S_{E_{m-2}}`` on K_{m-1}, ``Sperp_{Em,1|2} + d S_{Em}`` on K_m
* one function per inner triangle K_i (i = 2..m-1): ``S_{E_{i-2}}`` on
  K_{i-1}, a full matrix in the frame of E_{i-1} on K_i, ``h S_{E_{i+1}}``
  on K_{i+1}.

All other restrictions vanish. For m = 2 and m = 3 these are exactly the
classical two- and three-triangle constructions.

Frames are ``(t, n)`` pairs of unit vectors with ``n`` perpendicular to
``t``; ``S_E = t t^T``, ``Sperp_{E,1} = n n^T``, ``Sperp_{E,2} = n t^T + t n^T``.
"""
import numpy as np

from .shapes import edge_frames, matvec

PARALLEL_TOL = 1e-12


class CornerError(ValueError):
    pass


def _perp(t):
    # (a, b) -> (b, -a)
    return np.array([t[1], -t[0]])


def pair_inverse(t_a, t_b, n):
    """Closed-form inverse of ``[(t_a.n) t_a, -(t_b.n) t_b]``.

    With ``D = det(t_a t_b)`` the inverse has rows
    ``perp(t_b) / (D t_a.n)`` and ``perp(t_a) / (D t_b.n)``.
    """
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    n = np.asarray(n, dtype=float)
    D = t_a[0] * t_b[1] - t_a[1] * t_b[0]
    if abs(D) <= PARALLEL_TOL:
        raise CornerError("edge directions are parallel; the corner system is singular")
    ta_n, tb_n = float(t_a @ n), float(t_b @ n)
    if abs(ta_n) <= PARALLEL_TOL or abs(tb_n) <= PARALLEL_TOL:
        raise CornerError("an edge is parallel to the interior edge; degenerate triangle")
    return np.vstack([_perp(t_b) / (D * ta_n), _perp(t_a) / (D * tb_n)])


def corner_constants(plus, minus, e):
    """Constants c_1..c_4, d_1..d_4 of the two-triangle corner basis.

    ``plus`` and ``minus`` are the frames ``(t, n)`` of the boundary edges
    e_+ and e_-; ``e`` is the frame of the interior edge (only its normal is
    used). Returns arrays ``c`` and ``d`` of length 4.
    """
    (tp, np_), (tm, nm) = plus, minus
    ne = np.asarray(e[1], dtype=float)
    inv = pair_inverse(tp, tm, ne)
    p1, p2, _ = edge_frames(tp, np_)
    m1, m2, _ = edge_frames(tm, nm)
    c = np.zeros(4)
    d = np.zeros(4)
    for k, (rhs_mat, sign) in enumerate([(p1, -1.0), (p2, -1.0), (m1, 1.0), (m2, 1.0)]):
        c[k], d[k] = inv @ (sign * matvec(rhs_mat, ne))
    return c, d


def corner_constants_three(plus, e1, e2, minus):
    """Constants of the five-function basis around three triangles.

    Returns a dict with ``c``, ``d`` (length 4 for tau_1..tau_4) and the
    four constants ``c5, d5, g5, h5`` of tau_5.
    """
    vals = fan_basis([plus, e1, e2, minus])
    frames = [plus, e1, e2, minus]
    out = {"c": np.zeros(4), "d": np.zeros(4)}
    t0, t1, t2, t3 = (np.asarray(f[0], float) for f in frames)
    # recover the scalar multipliers from the matrix values
    def coef(v, t):
        return float(v @ np.array([t[0] ** 2, t[0] * t[1], t[1] ** 2]) /
                     np.dot(np.array([t[0] ** 2, t[0] * t[1], t[1] ** 2]),
                            np.array([t[0] ** 2, t[0] * t[1], t[1] ** 2])))
    p1, p2, sp = edge_frames(*plus)
    out["c"][0] = coef(vals[0, 0] - p1, t0)
    out["d"][0] = coef(vals[0, 1], t2)
    out["c"][1] = coef(vals[1, 0] - p2, t0)
    out["d"][1] = coef(vals[1, 1], t2)
    m1, m2, _ = edge_frames(*minus)
    out["c"][2] = coef(vals[2, 1], t1)
    out["d"][2] = coef(vals[2, 2] - m1, t3)
    out["c"][3] = coef(vals[3, 1], t1)
    out["d"][3] = coef(vals[3, 2] - m2, t3)
    q1, q2, qs = edge_frames(*e1)
    w = np.array([1.0, 2.0, 1.0])
    v = vals[4, 1]
    out["c5"] = float(np.sum(w * v * q1))
    out["d5"] = float(np.sum(w * v * q2)) / 2.0
    out["g5"] = float(np.sum(w * v * qs))
    out["h5"] = coef(vals[4, 2], t3)
    return out


def fan_basis(frames):
    """Relaxed corner basis for a fan of ``m = len(frames) - 1`` triangles.

    ``frames[i]`` is the ``(t, n)`` frame of edge E_i. Returns an array of
    shape ``(m + 2, m, 3)``: the vec value at the corner of every basis
    function on every triangle (to be multiplied by the corner's nodal
    function). Order: tau_1, tau_2, tau_3, tau_4, then the inner functions.
    """
    m = len(frames) - 1
    if m < 2:
        raise CornerError("a corner needs at least two triangles to be relaxed; split the corner triangle")
    T = [np.asarray(f[0], dtype=float) for f in frames]
    N = [np.asarray(f[1], dtype=float) for f in frames]
    S = [edge_frames(T[i], N[i]) for i in range(m + 1)]
    out = np.zeros((m + 2, m, 3))

    # tau_1, tau_2 on K_1 (index 0) and K_2 (index 1), across E_1
    inv = pair_inverse(T[0], T[2], N[1])
    for k in range(2):
        base = S[0][k]
        c, d = inv @ (-matvec(base, N[1]))
        out[k, 0] = base + c * S[0][2]
        out[k, 1] = d * S[2][2]

    # tau_3, tau_4 on K_{m-1} (index m-2) and K_m (index m-1), across E_{m-1}
    inv = pair_inverse(T[m - 2], T[m], N[m - 1])
    for k in range(2):
        base = S[m][k]
        c, d = inv @ matvec(base, N[m - 1])
        out[2 + k, m - 2] = c * S[m - 2][2]
        out[2 + k, m - 1] = base + d * S[m][2]

    # inner functions, K_i with i = 2..m-1 (1-based)
    for j, i in enumerate(range(2, m)):
        left = S[i - 2][2]
        tn, nn = T[i - 1], N[i - 1]
        s1, s2, st = S[i - 1]
        trace = matvec(left, nn)
        c = float(nn @ trace)
        d = float(tn @ trace)
        partial = c * s1 + d * s2
        inv = pair_inverse(T[i - 1], T[i + 1], N[i])
        g, h = inv @ (-matvec(partial, N[i]))
        out[4 + j, i - 2] = left
        out[4 + j, i - 1] = partial + g * st
        out[4 + j, i] = h * S[i + 1][2]
    return out


def fan_jumps(frames, values):
    """Normal-component jumps of ``values`` (nfun, m, 3) across the inner
    edges E_1..E_{m-1}; shape (nfun, m-1, 2)."""
    m = len(frames) - 1
    out = np.zeros((values.shape[0], m - 1, 2))
    for i in range(1, m):
        n = np.asarray(frames[i][1], dtype=float)
        out[:, i - 1] = matvec(values[:, i - 1], n) - matvec(values[:, i], n)
    return out
