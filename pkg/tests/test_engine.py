"""Gluing, mollification, amplitudes and the conservation tools of the iteration engine."""

from fractions import Fraction

import numpy as np
import pytest

from eulalpha import engine as en
from eulalpha import spectral as sp
from eulalpha.spectral import AlphaModel, Grid


@pytest.fixture(scope="module")
def glued():
    g = Grid(2, 64)
    u1 = sp.StationaryTrajectory(g, sp.taylor_green(g))
    u2 = sp.StationaryTrajectory(g, 2 * sp.taylor_green(g, shift=(0.7, 0.3)))
    return en.glue_initial(u1, u2, 1.0, AlphaModel(0.5))


class TestResample:
    def test_band_limited_round_trip(self):
        a, b = Grid(2, 32), Grid(2, 64)
        f = sp.random_band_limited(a, 10, np.random.default_rng(0))
        up = en.resample(f, a, b)
        assert np.abs(up[:, ::2, ::2] - f).max() <= 1e-13
        np.testing.assert_allclose(en.resample(up, b, a), f, atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            en.resample(np.zeros((16, 16)), Grid(2, 16), Grid(3, 16))


class TestCutoff:
    def test_smoothstep_limits(self):
        s = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
        np.testing.assert_allclose(en.smoothstep(s), [0, 0, 0.5, 1, 1])

    def test_smoothstep_prime(self):
        s = np.linspace(0.05, 0.95, 19)
        h = 1e-6
        fd = (en.smoothstep(s + h) - en.smoothstep(s - h)) / (2 * h)
        np.testing.assert_allclose(en.smoothstep_prime(s), fd, atol=1e-7)

    def test_glue_cutoff_plateaus(self):
        c = en.GlueCutoff(2.0)
        assert np.all(c.value(np.linspace(0, 0.8, 9)) == 1.0)
        assert np.all(c.value(np.linspace(1.2, 2.0, 9)) == 0.0)
        assert c.derivative(1.0) < 0

    def test_chi(self):
        np.testing.assert_allclose(en.chi([0.0, 0.5, 1.0]), 1.0)
        np.testing.assert_allclose(en.chi([2.0, 5.0]), [2.0, 5.0])
        z = np.linspace(0, 3, 301)
        assert np.all(en.chi(z) >= 1.0)


class TestGlue:
    def test_relaxed_system_and_support(self, glued):
        rep = en.verify_glue(glued, 1.0)
        assert rep.residual.max() <= 1e-10
        assert rep.support_ok
        assert rep.exact_left and rep.exact_right

    def test_hamiltonian_endpoints(self, glued):
        rep = en.verify_glue(glued, 1.0, [0.0, 1.0])
        assert rep.hamiltonian[0] == rep.H1
        assert rep.hamiltonian[-1] == rep.H2
        assert rep.H2 > rep.H1

    def test_stress_traceless(self, glued):
        R = glued.R.at(0.5)
        assert np.abs(R.components).max() > 0
        assert np.abs(R.trace()).max() <= 1e-12 * np.abs(R.components).max()

    def test_rejects_nonzero_mean(self):
        g = Grid(2, 16)
        u = sp.StationaryTrajectory(g, np.ones((2,) + g.shape))
        with pytest.raises(ValueError, match="mean"):
            en.glue_initial(u, u, 1.0, AlphaModel(1.0))
        with pytest.raises(ValueError):
            en.glue_initial(u, u, 0.0, AlphaModel(1.0))


class TestMollifier:
    @pytest.mark.parametrize("dim, n", [(2, 32), (3, 16)])
    def test_symbol_unit_mass_and_decay(self, dim, n):
        m = en.mollifier_symbol(Grid(dim, n), 0.3)
        assert m.flat[0] == pytest.approx(1.0, abs=1e-14)
        assert np.abs(m).max() <= 1.0 + 1e-14

    def test_near_identity_on_low_modes(self):
        g = Grid(2, 64)
        f = np.sin(g.x[0]) * np.cos(2 * g.x[1])
        errs = [np.abs(en.space_mollify(g, f, ell) - f).max() for ell in (0.1, 0.05)]
        # second-order in ell
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_time_nodes(self):
        s, w = en.time_nodes(0.1)
        assert w.sum() == pytest.approx(1.0)
        assert np.all(np.abs(s) < 0.1)
        assert abs((s * w).sum()) <= 1e-15

    def test_mollified_pair(self, glued):
        moll = en.mollify_pair(glued, 0.2, n_time=16)
        assert moll.supp_t == pytest.approx((0.2, 0.8))
        assert moll.residual(0.5) <= 1e-10
        with pytest.raises(ValueError):
            en.mollify_pair(glued, 0.05)  # below the 64^2 spacing


class TestAmplitude:
    def test_ball_condition(self, glued):
        R = glued.R.at(0.5)
        amp = en.build_amplitude(R, 1e-3, 32.0, 0.05, 1.0, glued.model)
        assert amp.check()
        assert amp.ratio <= 0.05
        assert all(ok for _, _, ok in amp.lp_report.values())

    def test_floor_where_stress_small(self, glued):
        R = sp.StressField.zeros(glued.grid)
        amp = en.build_amplitude(R, 1e-3, 32.0, 0.05, 1.0, glued.model)
        np.testing.assert_allclose(amp.rho, amp.floor)
        assert amp.ratio == 0.0


class TestToyParameters:
    def test_defaults(self):
        p = en.ToyParameters()
        assert p.lam_next == 32 and p.r == Fraction(1, 8)
        assert p.delta_next == pytest.approx(32.0**-2)
        assert p.lam_next2 == 1024.0

    def test_rejects(self):
        with pytest.raises(ValueError):
            en.ToyParameters(tau=0.0)


class TestConservation:
    def test_flux_is_half_hamiltonian_rate(self):
        g = Grid(2, 64)
        m = AlphaModel(0.3)
        u0 = sp.random_solenoidal(g, 8, np.random.default_rng(1))
        u0 /= np.abs(u0).max()
        h = 1e-3
        traj = sp.evolve_smooth(u0, m, h / 4, 2 * h, grid=g, save_every=4)
        eps = 0.3
        H = [sp.hamiltonian(en.space_mollify(g, s, eps), m, g) for s in traj.states]
        rate = (H[2] - H[0]) / (2 * h)
        flux = en.energy_flux(g, traj.states[1], eps, m.alpha)
        assert flux == pytest.approx(0.5 * rate, rel=1e-5)

    def test_flux_vanishes_for_stationary_flow(self):
        g = Grid(2, 32)
        assert abs(en.energy_flux(g, sp.taylor_green(g), 0.3, 0.5)) <= 1e-12

    def test_taylor_green_drift(self):
        g = Grid(2, 32)
        rep = en.conservation_experiment(sp.taylor_green(g), AlphaModel(0.1), 0.01, 0.5, g)
        assert rep.drift <= 1e-12

    def test_drift_ratio_fourth_order(self):
        g = Grid(2, 32)
        u0 = sp.random_solenoidal(g, 4, np.random.default_rng(0))
        u0 /= np.abs(u0).max()
        d1, d2, ratio = en.drift_ratio(u0, AlphaModel(0.1), 0.02, 0.4, g)
        assert d2 < d1
        assert 8 <= ratio <= 32
