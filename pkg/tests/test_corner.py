import numpy as np
import pytest

from nestedhz.corner import (
    CornerError, corner_constants, corner_constants_three, fan_basis, fan_jumps, pair_inverse,
)
from nestedhz.shapes import edge_frames, matvec, rot90


def frame(angle):
    t = np.array([np.cos(angle), np.sin(angle)])
    return t, rot90(t)


def test_parallel_edges_rejected():
    with pytest.raises(CornerError):
        pair_inverse([1, 0], [-1, 0], [0, 1])
    with pytest.raises(CornerError):
        corner_constants(frame(0.0), frame(np.pi), frame(np.pi / 2))


def test_pair_inverse_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b, c = rng.uniform(0, 2 * np.pi, 3)
        ta, tb, n = frame(a)[0], frame(b)[0], frame(c)[1]
        try:
            inv = pair_inverse(ta, tb, n)
        except CornerError:
            continue
        A = np.column_stack([(ta @ n) * ta, -(tb @ n) * tb])
        assert np.allclose(inv, np.linalg.inv(A), rtol=1e-12, atol=1e-12)


def test_right_angle_corner_against_generic_solve():
    plus, minus = frame(np.pi / 2), frame(0.0)  # e_+ along y, e_- along x
    e = frame(np.pi / 4)
    c, d = corner_constants(plus, minus, e)
    tp, tm, ne = plus[0], minus[0], e[1]
    Sp = edge_frames(*plus)
    Sm = edge_frames(*minus)
    A = np.column_stack([matvec(Sp[2], ne), -matvec(Sm[2], ne)])
    rhs = [-matvec(Sp[0], ne), -matvec(Sp[1], ne), matvec(Sm[0], ne), matvec(Sm[1], ne)]
    for k in range(4):
        cd = np.linalg.solve(A, rhs[k])
        assert np.allclose([c[k], d[k]], cd, atol=1e-13)
    # normal continuity across e for the four functions
    for k in range(2):
        jump = matvec(Sp[k] + c[k] * Sp[2], ne) - matvec(d[k] * Sm[2], ne)
        assert np.max(np.abs(jump)) < 1e-13
        jump = matvec(c[2 + k] * Sp[2], ne) - matvec(Sm[k] + d[2 + k] * Sm[2], ne)
        assert np.max(np.abs(jump)) < 1e-13


def test_two_triangle_fan_structure():
    frames = [frame(1.9), frame(1.1), frame(0.2)]
    vals = fan_basis(frames)
    assert vals.shape == (4, 2, 3)
    assert np.max(np.abs(fan_jumps(frames, vals))) < 1e-13
    # tau_3 and tau_4 restricted to K_+ are multiples of S_{e+}
    Sp = edge_frames(*frames[0])[2]
    for k in (2, 3):
        v = vals[k, 0]
        assert np.allclose(v, (v @ Sp) / (Sp @ Sp) * Sp, atol=1e-13)


def test_three_triangle_fan():
    frames = [frame(a) for a in (2.6, 1.9, 1.0, 0.3)]
    vals = fan_basis(frames)
    assert vals.shape == (5, 3, 3)
    assert np.max(np.abs(fan_jumps(frames, vals))) < 1e-13
    # tau_1 vanishes on K_3, tau_5 keeps all three pieces
    assert np.allclose(vals[0, 2], 0)
    assert np.all(np.linalg.norm(vals[4], axis=1) > 0)
    consts = corner_constants_three(*frames)
    assert set(consts) == {"c", "d", "c5", "d5", "g5", "h5"}


@pytest.mark.parametrize("m", [2, 3, 4, 6])
def test_fan_jumps_vanish_and_functions_independent(m):
    angles = np.linspace(2.8, 0.2, m + 1)
    frames = [frame(a) for a in angles]
    vals = fan_basis(frames)
    assert vals.shape == (m + 2, m, 3)
    assert np.max(np.abs(fan_jumps(frames, vals))) < 1e-12
    assert np.linalg.matrix_rank(vals.reshape(m + 2, -1), tol=1e-10) == m + 2


def test_single_triangle_rejected():
    with pytest.raises(CornerError):
        fan_basis([frame(1.0), frame(0.0)])


def test_collapsed_triangle_rejected():
    # the interior edge is parallel to e_+: the corner triangle has zero area
    with pytest.raises(CornerError):
        fan_basis([frame(1.0), frame(1.0), frame(0.0)])
