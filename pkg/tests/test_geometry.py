from fractions import Fraction as F

import numpy as np
import pytest

from eulalpha import geometry


def random_traceless(rng, n, dim, radius):
    R = rng.uniform(-1, 1, size=(dim, dim, n))
    R = 0.5 * (R + R.transpose(1, 0, 2))
    R -= np.eye(dim)[:, :, None] * np.trace(R)[None, None] / dim
    return R * (radius * rng.uniform(0, 1, n) / geometry.max_entry_norm(R))[None, None]


def test_f_matrix_exact():
    k1 = (F(1), F(0), F(0))
    k4 = (F(3, 5), F(4, 5), F(0))
    assert geometry.f_matrix(k1) == [[2, 0, 0], [0, -1, 0], [0, 0, -1]]
    expect = [[F(2, 25), F(36, 25), 0], [F(36, 25), F(23, 25), 0], [0, 0, -1]]
    assert geometry.f_matrix(k4) == expect
    assert all(isinstance(x, F) for row in geometry.f_matrix(k4) for x in row)


@pytest.mark.parametrize("dim, size", [(3, 9), (2, 4)])
def test_direction_sets(dim, size):
    sets = geometry.build_direction_sets(2, dim)
    assert len(sets) == 3
    for s in sets:
        assert len(s) == size
        K = s.as_array()
        np.testing.assert_allclose((K**2).sum(1), 1.0, atol=1e-15)
        for k, fr in zip(K, s.frame_arrays()):
            basis = np.vstack([fr, k])
            np.testing.assert_allclose(basis @ basis.T, np.eye(dim), atol=1e-14)
    assert geometry.sets_disjoint(sets)
    assert geometry.minimal_orthogonality(sets[0], sets[1]) > 0


def test_rotation_is_orthogonal_and_rational():
    O = geometry.rotation_power(3, 2)
    Onp = np.array([[float(x) for x in r] for r in O])
    np.testing.assert_allclose(Onp @ Onp.T, np.eye(3), atol=1e-15)
    assert all(isinstance(x, F) for r in O for x in r)


@pytest.mark.parametrize("dim", [3, 2])
@pytest.mark.parametrize("set_index", [0, 1])
def test_decomposition_reconstructs(dim, set_index):
    dset = geometry.build_direction_sets(set_index, dim)[set_index]
    rng = np.random.default_rng(dim * 10 + set_index)
    R = random_traceless(rng, 500, dim, dset.epsilon)
    sol = geometry.decompose_stress(R, dset)
    assert sol.squares.min() > 0
    # independent reassembly with the float f(k)
    back = np.zeros_like(R)
    for c2, k in zip(sol.squares, dset.as_array()):
        back += c2[None, None] * (dim * np.outer(k, k) - np.eye(dim))[:, :, None]
    assert np.abs(back - R).max() <= 1e-12
    assert np.ptp(sol.squares.sum(0)) <= 1e-12
    np.testing.assert_allclose(sol.squares.sum(0), sol.c_sum, rtol=1e-12)


def test_decompose_exact_zero_stress():
    sq = geometry.decompose_exact([[0] * 3] * 3)
    assert all(isinstance(x, F) and x > 0 for x in sq)
    acc = [[F(0)] * 3 for _ in range(3)]
    for c2, k in zip(sq, geometry.build_direction_sets(0, 3)[0].vectors):
        fk = geometry.f_matrix(k)
        for i in range(3):
            for j in range(3):
                acc[i][j] += c2 * fk[i][j]
    assert acc == [[0] * 3] * 3


def test_out_of_ball_rejected():
    dset = geometry.build_direction_sets(0, 3)[0]
    R = np.diag([1.0, -0.5, -0.5])[:, :, None] * 2 * dset.epsilon
    with pytest.raises(geometry.OutOfBall):
        geometry.decompose_stress(R, dset)


def test_certify_epsilon():
    rep = geometry.certify_epsilon(geometry.build_direction_sets(0, 3)[0], samples=2000)
    assert rep["min_square"] > 0
    assert rep["max_residual"] < 1e-12


@pytest.mark.parametrize("xi", [(0.0, 0.0, 1.0), (0.6, 0.8, 0.0), (1.0, 0.0)])
def test_average_identity_shape(xi):
    A = geometry.pipe_average_identity(xi, 2.0)
    n = len(xi)
    assert np.trace(A) == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(A @ np.array(xi), -2.0 * np.array(xi), atol=1e-14)
