from fractions import Fraction

import numpy as np
import pytest

from eulalpha import geometry, mikado
from eulalpha import inverse_div as idv
from eulalpha import spectral as sp
from eulalpha.transport import MapSample, ShearMap


@pytest.mark.parametrize("dim, n", [(3, 32), (2, 64)])
def test_fourier_inverse_div(dim, n):
    g = sp.Grid(dim, n)
    rng = np.random.default_rng(dim)
    v = sp.random_band_limited(g, n // 3, rng)
    R = idv.fourier_inverse_div(g, v)
    vbar = g.mean(v).reshape((dim,) + (1,) * dim)
    assert np.abs(sp.tensor_div(g, R) - (v - vbar)).max() <= 1e-12 * np.abs(v).max()
    assert np.abs(R.trace()).max() <= 1e-12 * np.abs(R.components).max()


def test_coefficients():
    assert idv._coefficients(3) == (-0.5, -0.5)
    assert idv._coefficients(2) == (0.0, -1.0)


def test_constant_field_gives_zero():
    g = sp.Grid(2, 16)
    R = idv.fourier_inverse_div(g, np.ones((2,) + g.shape))
    assert np.abs(R.components).max() == 0.0


def test_shape_error():
    g = sp.Grid(2, 16)
    with pytest.raises(ValueError):
        idv.fourier_inverse_div(g, np.ones(g.shape))


def test_single_mode_by_hand():
    # v = (cos x2, 0): R_12 = R_21 = sin x2 in 2-D
    g = sp.Grid(2, 16)
    v = np.array([np.cos(g.x[1]), np.zeros(g.shape)])
    M = idv.fourier_inverse_div(g, v).full()
    np.testing.assert_allclose(M[0, 1], np.sin(g.x[1]), atol=1e-14)
    np.testing.assert_allclose(M[0, 0], 0.0, atol=1e-14)


@pytest.fixture(scope="module")
def sheared_pipe():
    dset = geometry.build_direction_sets(0, 2)[0]
    fam = mikado.PipeFamily(dset.vectors[2], dset.frames[2], 2, Fraction(1, 2), 2, dim=2)
    return idv.ScaledFast(idv.PipeFast(fam), 2.0**-4, 1)


def _step(n, theta, s=0.05):
    g = sp.Grid(2, n)
    G = np.array([1 + 0.5 * np.cos(g.x[1]), 0.3 * np.sin(g.x[0])])
    flow = ShearMap(2, s).sample(g)
    out = idv.iterative_div_step(g, G, theta, flow)
    res, scale = idv.step_residual(g, G, theta, flow, out)
    return res / scale, out


def test_step_identity_converges(sheared_pipe):
    coarse, _ = _step(64, sheared_pipe)
    fine, out = _step(128, sheared_pipe)
    assert fine <= 1e-6
    assert coarse / fine >= 4
    assert np.abs(out.stress.trace()).max() <= 1e-12 * np.abs(out.S).max()


def test_step_identity_identity_flow(sheared_pipe):
    g = sp.Grid(2, 128)
    G = np.array([1 + 0.5 * np.cos(g.x[1]), 0.3 * np.sin(g.x[0])])
    flow = MapSample.identity(g)
    out = idv.iterative_div_step(g, G, sheared_pipe, flow)
    res, scale = idv.step_residual(g, G, sheared_pipe, flow, out)
    assert res <= 1e-6 * scale


def test_step_rejects_large_deformation(sheared_pipe):
    g = sp.Grid(2, 32)
    G = np.ones((2,) + g.shape)
    with pytest.raises(ValueError, match="flow-gradient"):
        idv.iterative_div_step(g, G, sheared_pipe, ShearMap(2, 0.9).sample(g))


@pytest.mark.parametrize("d", [1, 2])
def test_full_inverse_reassembly(d):
    g = sp.Grid(2, 128)
    G = np.array([1 + 0.5 * np.cos(g.x[1]), 0.3 * np.sin(g.x[0])])
    theta = idv.SpectralFast(g, np.sin(8 * g.x[0]) * np.cos(8 * g.x[1]))
    flow = ShearMap(2, 0.05).sample(g)
    out = idv.full_inverse_div(g, G, theta, flow, d, 8.0)
    assert out.n_terms == 2**d
    res, scale = idv.reassembly_residual(g, G, theta, flow, d, 8.0, out)
    assert res <= 1e-10 * scale


def test_exchange_condition_enforced():
    g = sp.Grid(2, 32)
    theta = idv.SpectralFast(g, np.sin(2 * g.x[0]))
    with pytest.raises(idv.ExchangeConditionError):
        idv.full_inverse_div(g, np.ones((2,) + g.shape), theta, MapSample.identity(g), 1, 2.0, lam_G=3.0)
