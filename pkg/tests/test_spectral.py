"""Spectral calculus, Hamiltonian, residuals and the RK4 integrator."""

import numpy as np
import pytest

from eulalpha import spectral as sp
from eulalpha.spectral import AlphaModel, Grid, SpectralField, StressField


@pytest.fixture
def rng():
    return np.random.default_rng(3)


class TestGrid:
    @pytest.mark.parametrize("dim, n", [(4, 16), (2, 12), (3, 4)])
    def test_rejects(self, dim, n):
        with pytest.raises(ValueError):
            Grid(dim, n)

    def test_coordinates(self):
        g = Grid(2, 16)
        assert g.x.shape == (2, 16, 16)
        assert g.x[0, 1, 0] == pytest.approx(2 * np.pi / 16)
        assert g.volume == pytest.approx(4 * np.pi**2)


class TestOperators:
    @pytest.mark.parametrize("dim, n", [(2, 32), (3, 16)])
    def test_div_curl_and_curl_grad(self, rng, dim, n):
        g = Grid(dim, n)
        f = sp.random_band_limited(g, n // 4, rng, rank=0)
        u = sp.random_band_limited(g, n // 4, rng)
        cg = sp.curl(g, sp.grad(g, f))
        assert np.abs(cg).max() <= 1e-12 * np.abs(sp.grad(g, f)).max() * n
        if dim == 3:
            dc = sp.div(g, sp.curl(g, u))
        else:
            dc = sp.div(g, sp.perp_grad(g, f))
        assert np.abs(dc).max() <= 1e-12 * n

    def test_derivative_of_sine(self):
        g = Grid(2, 32)
        f = np.sin(3 * g.x[0]) * np.cos(2 * g.x[1])
        G = sp.grad(g, f)
        np.testing.assert_allclose(G[0], 3 * np.cos(3 * g.x[0]) * np.cos(2 * g.x[1]), atol=1e-12)
        np.testing.assert_allclose(sp.laplacian(g, f), -13 * f, atol=1e-11)

    def test_leray_projects(self, rng):
        g = Grid(3, 16)
        v = sp.random_band_limited(g, 5, rng)
        w = sp.leray(g, v)
        assert sp.divergence_norm(g, w) <= 1e-13
        np.testing.assert_allclose(sp.leray(g, w), w, atol=1e-13)

    def test_leray_kills_gradients(self, rng):
        g = Grid(2, 32)
        p = sp.random_band_limited(g, 6, rng, rank=0)
        assert np.abs(sp.leray(g, sp.grad(g, p))).max() <= 1e-12

    def test_helmholtz_inverse(self, rng):
        g = Grid(2, 32)
        u = sp.random_band_limited(g, 8, rng)
        np.testing.assert_allclose(sp.inv_helmholtz(g, sp.helmholtz(g, u, 0.3), 0.3), u, atol=1e-12)

    @pytest.mark.parametrize("op, rank", [("div", 0), ("curl", 2), ("grad", 2), ("nabla", 1)])
    def test_diff_ops_rank_errors(self, op, rank):
        g = Grid(2, 16)
        f = SpectralField(g, np.zeros((2,) * rank + g.shape))
        with pytest.raises(ValueError):
            sp.diff_ops(f, op)


class TestFields:
    def test_transform_constant(self):
        g = Grid(2, 16)
        c = sp.transform(SpectralField(g, np.full(g.shape, 2.5)))
        assert c[0, 0] == pytest.approx(2.5)
        assert np.abs(c).sum() == pytest.approx(2.5)

    def test_spectral_roundtrip(self, rng):
        g = Grid(3, 16)
        a = rng.standard_normal((3,) + g.shape)
        f = SpectralField(g, a)
        back = SpectralField(g, f.spectral, spectral=True)
        np.testing.assert_allclose(back.physical, a, atol=1e-13)

    def test_bad_shapes(self):
        g = Grid(2, 16)
        with pytest.raises(ValueError):
            SpectralField(g, np.zeros((3, 16, 16)))
        with pytest.raises(ValueError):
            StressField(g, np.zeros((4, 16, 16)))

    def test_stress_traceless_split(self, rng):
        g = Grid(3, 8)
        R = StressField(g, rng.standard_normal((6,) + g.shape))
        part, tr = R.traceless()
        assert np.abs(part.trace()).max() <= 1e-14
        M = R.full()
        assert np.array_equal(M, np.swapaxes(M, 0, 1))


class TestHamiltonian:
    def test_taylor_green_value(self):
        g = Grid(2, 32)
        u = sp.taylor_green(g)
        # |u|^2 averages to 1/2 and |grad u|^2 to 1
        expect = 4 * np.pi**2 * (0.5 + 0.25 * 1.0)
        assert sp.hamiltonian(u, AlphaModel(0.5), g) == pytest.approx(expect, rel=1e-13)

    def test_parseval(self, rng):
        g = Grid(3, 16)
        u = sp.random_solenoidal(g, 5, rng)
        m = AlphaModel(0.2)
        a, b = sp.hamiltonian(u, m, g), sp.hamiltonian_quadrature(u, m, g)
        assert abs(a - b) <= 1e-10 * a


class TestResiduals:
    def test_taylor_green_is_stationary(self):
        g = Grid(2, 32)
        u = sp.taylor_green(g)
        m = AlphaModel(0.5)
        res, scale = sp.pressure_free_residual(g, u, np.zeros_like(u), None, m)
        assert np.abs(res).max() <= 1e-12 * scale

    def test_relaxed_rejects_compressible(self):
        g = Grid(2, 16)
        u = np.array([np.sin(g.x[0]), np.zeros(g.shape)])
        with pytest.raises(ValueError, match="divergence"):
            sp.relaxed_residual(u, None, None, np.zeros_like(u), AlphaModel(1.0), g)

    def test_weak_forms_agree(self, rng):
        g = Grid(2, 32)
        m = AlphaModel(0.4)
        u = sp.random_solenoidal(g, 5, rng)
        phi = sp.random_solenoidal(g, 5, rng)
        a = sp.weak_pairing(u, phi, m, g)
        b = sp.weak_pairing(u, phi, m, g, form="divergence")
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))
        assert sp.weak_pairing(np.zeros_like(u), np.zeros_like(u), m, g) == 0.0

    def test_weak_pairing_rejects_compressible_test_field(self, rng):
        g = Grid(2, 16)
        phi = np.array([np.sin(g.x[0]), np.zeros(g.shape)])
        with pytest.raises(ValueError):
            sp.weak_pairing(sp.taylor_green(g), phi, AlphaModel(1.0), g)


class TestEvolve:
    def test_taylor_green_orbit(self):
        g = Grid(2, 32)
        u0 = sp.taylor_green(g)
        traj = sp.evolve_smooth(u0, AlphaModel(0.1), 0.01, 1.0, grid=g, save_every=20)
        assert max(np.abs(s - u0).max() for s in traj.states) <= 1e-8

    def test_fourth_order(self, rng):
        g = Grid(2, 32)
        m = AlphaModel(0.2)
        u0 = sp.random_solenoidal(g, 4, rng)
        u0 *= 1.0 / np.abs(u0).max()
        ref = sp.evolve_smooth(u0, m, 0.0025, 0.4, grid=g, save_every=1000).states[-1]
        errs = [np.abs(sp.evolve_smooth(u0, m, dt, 0.4, grid=g, save_every=1000).states[-1] - ref).max()
                for dt in (0.04, 0.02)]
        assert 16 * 0.7 <= errs[0] / errs[1] <= 16 * 1.3

    def test_snapshots_divergence_free(self, rng):
        g = Grid(2, 32)
        traj = sp.evolve_smooth(sp.random_solenoidal(g, 5, rng), AlphaModel(0.2), 0.01, 0.1, grid=g)
        assert all(sp.divergence_norm(g, s) <= 1e-12 for s in traj.states)
        np.testing.assert_allclose(traj.at(traj.times[3]), traj.states[3])

    def test_bad_horizon(self):
        g = Grid(2, 16)
        with pytest.raises(ValueError):
            sp.evolve_smooth(sp.taylor_green(g), AlphaModel(1.0), 0.3, 1.0, grid=g)

    def test_blowup_detected(self, rng):
        g = Grid(2, 16)
        u0 = 50 * sp.random_solenoidal(g, 5, rng)
        with pytest.raises(sp.SpectralBlowup):
            sp.evolve_smooth(u0, AlphaModel(0.05), 0.05, 2.0, grid=g)


def test_interpolation_matches_samples(rng):
    g = Grid(2, 32)
    f = sp.random_band_limited(g, 6, rng, rank=0)
    pts = g.x[:, ::4, ::4] + 0.0
    np.testing.assert_allclose(sp.interpolate_at(g, f, pts), f[::4, ::4], atol=1e-12)
    off = rng.uniform(0, 2 * np.pi, size=(2, 10))
    exact = sp.interpolate_at(g, f, off)
    assert exact.shape == (10,)
