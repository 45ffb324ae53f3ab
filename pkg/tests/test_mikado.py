"""Radial pipe profiles, pipe families and their identities."""

from fractions import Fraction as F

import numpy as np
import pytest

from eulalpha import geometry, mikado
from eulalpha import spectral as sp
from eulalpha.transport import ShearMap


@pytest.fixture(scope="module")
def set3():
    return geometry.build_direction_sets(0, 3)[0]


@pytest.fixture(scope="module")
def set2():
    return geometry.build_direction_sets(0, 2)[0]


class TestProfile:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_zero_mean(self, d):
        prof = mikado.build_profile(d, 1.0)
        assert abs(prof.mean_integral()) <= 1e-10

    def test_normalization(self):
        prof = mikado.build_profile(2, 3.5)
        assert prof.gradient_energy() == pytest.approx(3.5, rel=1e-10)

    def test_depth_zero_rejected(self):
        with pytest.raises(ValueError):
            mikado.build_profile(0)

    def test_support(self):
        prof = mikado.build_profile(2)
        s = np.linspace(0, 10, 2001)
        outside = s >= mikado.Z_SUPPORT**2
        assert np.all(prof.value(2, s[outside]) == 0)
        assert np.abs(prof.value(2, s[~outside])).max() > 0

    def test_chain_matches_cartesian_laplacian(self):
        # spectral Laplacian of H on a periodic box holding the support
        prof = mikado.build_profile(2)
        g = sp.Grid(2, 256)
        z = g.x - np.pi
        s = (z**2).sum(0)
        f = prof.value(0, s)
        for _ in range(2):
            f = sp.laplacian(g, f)
        h = prof.value(2, s)
        assert np.abs(f - h).max() <= 1e-8 * np.abs(h).max()

    def test_pressure_alpha_zero_limit(self, set3):
        fam = mikado.family_from_set(set3, 2, 8, F(1, 2), 2)
        g = sp.Grid(3, 32)
        p = fam.pressure(g.x, sp.AlphaModel(1e-12))
        np.testing.assert_allclose(p, 0.5 * fam.rho(g.x) ** 2, atol=1e-12)

    def test_pressure_constant_outside(self, set3):
        fam = mikado.family_from_set(set3, 2, 8, F(1, 2), 2)
        g = sp.Grid(3, 32)
        p = fam.pressure(g.x, sp.AlphaModel(1.0))
        outside = fam.rho(g.x) == 0
        assert np.ptp(p[outside]) <= 1e-12


class TestFamily:
    def test_lambda_r_integer(self, set3):
        with pytest.raises(ValueError, match="integer"):
            mikado.family_from_set(set3, 0, 8, F(1, 3), 2)

    def test_overlap_rejected_in_3d(self, set3):
        with pytest.raises(ValueError, match="overlap"):
            mikado.family_from_set(set3, 3, 8, F(1, 2), 2)
        assert mikado.separated_r(set3, 3, 8, F(1, 2)) == F(1, 4)

    def test_periodicity(self, set3):
        fam = mikado.family_from_set(set3, 2, 8, F(1, 2), 2)
        pf = mikado.realize_pipe(fam, sp.Grid(3, 32))
        for axis in (1, 2, 3):
            assert np.abs(np.roll(pf.W, 8, axis=axis) - pf.W).max() <= 1e-12

    def test_unresolved_grid(self, set3):
        fam = mikado.family_from_set(set3, 2, 16, F(1, 2), 2)
        with pytest.raises(ValueError, match="resolve"):
            mikado.realize_pipe(fam, sp.Grid(3, 32))

    def test_divergence_and_direction(self, set3):
        fam = mikado.family_from_set(set3, 2, 8, F(1, 2), 2)
        g = sp.Grid(3, 32)
        pf = mikado.realize_pipe(fam, g)
        assert np.abs(sp.div(g, pf.W)).max() <= 1e-12
        assert np.abs(sp.grad(g, pf.rho)[2]).max() <= 1e-12
        np.testing.assert_array_equal(pf.W[2], pf.rho)

    def test_mean_zero_on_resolved_grid(self, set2):
        g = sp.Grid(2, 512)
        fam = mikado.family_from_set(set2, 2, 2, F(1, 2), 2)
        rho = fam.rho(g.x)
        assert abs(rho.mean()) <= 1e-12 * np.abs(rho).max()

    def test_stream_function_2d(self, set2):
        g = sp.Grid(2, 512)
        fam = mikado.family_from_set(set2, 0, 2, F(1, 2), 2)
        pf = mikado.realize_pipe(fam, g)
        assert np.abs(sp.perp_grad(g, pf.U) - pf.W).max() <= 1e-10 * np.abs(pf.W).max()

    def test_vector_potential_3d_on_slice(self, set3):
        # xi = e3: curl U . e3 = d1 U2 - d2 U1 on an (x1, x2) slice
        fam = mikado.family_from_set(set3, 2, 2, F(1, 2), 2)
        g2 = sp.Grid(2, 512)
        x = np.concatenate([g2.x, np.zeros((1,) + g2.shape)])
        U = fam.potential(x)
        c = sp.curl(g2, U[:2])
        rho = fam.rho(x)
        assert np.abs(c - rho).max() <= 1e-10 * np.abs(rho).max()
        assert np.abs(U[2]).max() == 0.0

    def test_theta_potential(self, set2):
        g = sp.Grid(2, 512)
        fam = mikado.family_from_set(set2, 0, 2, F(1, 2), 2)
        th = fam.theta(g.x)
        lap2 = sp.laplacian(g, sp.laplacian(g, th)) / fam.lam**4
        rho = fam.rho(g.x)
        assert np.abs(lap2 - rho).max() <= 1e-8 * np.abs(rho).max()


class TestStationarity:
    @pytest.mark.parametrize("i", [2, 3])
    def test_residuals(self, set3, i):
        r = mikado.separated_r(set3, i, 8, F(1, 2))
        fam = mikado.family_from_set(set3, i, 8, r, 2)
        rep = mikado.verify_stationarity(fam, sp.AlphaModel(1.0), 256)
        assert rep.euler_residual <= 1e-10
        assert rep.alpha_residual <= 1e-6
        assert rep.passed()

    def test_wrong_pressure_detected(self, set3):
        # dropping the alpha-dependent part of the pressure must show up
        fam = mikado.family_from_set(set3, 2, 8, F(1, 2), 2)
        cs = mikado.cross_section_fields(fam, sp.AlphaModel(1.0), 128)
        cg = cs["grid"]
        v = cs["rho"] - cs["lap_rho"]
        res = -cs["rho"] * cg.d(v, 0) + cg.d(0.5 * cs["rho"] ** 2, 0)
        assert np.abs(res).max() > 1e-3 * np.abs(cs["rho"] * cg.d(v, 0)).max()


@pytest.mark.parametrize("i", range(9))
def test_average_identity_all_directions(set3, i):
    r = mikado.separated_r(set3, i, 8, F(1, 2))
    fam = mikado.family_from_set(set3, i, 8, r, 2)
    avg, C = mikado.pipe_average_quadrature(fam, 256)
    target = geometry.pipe_average_identity(fam.xi_np, C)
    assert np.abs(avg - target).max() <= 1e-8 * np.abs(target).max()


def test_average_identity_2d_with_images():
    ds = geometry.build_direction_sets(1, 2)[1]
    fam = mikado.family_from_set(ds, 0, 32, F(1, 8), 2)
    avg, C = mikado.pipe_average_quadrature(fam, 2048)
    assert C == pytest.approx(32**2, rel=1e-8)
    target = geometry.pipe_average_identity(fam.xi_np, C)
    assert np.abs(avg - target).max() <= 1e-8 * np.abs(target).max()


def test_lp_scaling():
    rows = mikado.lp_scaling_table(16, [F(1, 2), F(1, 4), F(1, 8)], 2)
    # measured/predicted is constant across r within a factor 2
    by = {}
    for order, p, r, meas, pred in rows:
        by.setdefault((order, p), []).append(meas / pred)
    for vals in by.values():
        assert max(vals) / min(vals) <= 2


def test_deformed_pipe_identity(set2):
    g = sp.Grid(2, 512)
    fam = mikado.family_from_set(set2, 0, 2, F(1, 2), 2)
    same = mikado.deformed_pipe(fam, ShearMap(2, 0.0).sample(g), g)
    np.testing.assert_allclose(same["lhs"], fam.W(g.x), atol=1e-14)
    out = mikado.deformed_pipe(fam, ShearMap(2, 0.05).sample(g), g)
    assert out["rel_diff"] <= 1e-6
    assert out["div_rhs"] <= 1e-8
