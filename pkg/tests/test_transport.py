"""Flow maps, the temporal partition and decoupling measurements."""

import warnings
from fractions import Fraction

import numpy as np
import pytest

from eulalpha import geometry, mikado
from eulalpha import spectral as sp
from eulalpha import transport as tr


@pytest.fixture(scope="module")
def grid():
    return sp.Grid(2, 32)


@pytest.fixture(scope="module")
def shear_flow(grid):
    traj = sp.StationaryTrajectory(grid, tr.shear_velocity(grid))
    return tr.solve_flow(traj, 0.5, [0.45, 0.475, 0.5, 0.55], window=0.05)


class TestFlowMaps:
    def test_closed_form_shear(self, grid):
        m = tr.ShearMap(2, 0.1)
        P, X = m.sample(grid), m.sample(grid, inverse=True)
        back = X.phi + sp.interpolate_at(grid, P.displacement, X.phi)
        assert np.abs(back - grid.x).max() <= 1e-13
        np.testing.assert_allclose(P.det, 1.0, atol=1e-15)

    def test_matches_closed_form(self, grid, shear_flow):
        for t in shear_flow.times:
            ref = tr.ShearMap(2, t - 0.5)
            assert np.abs(shear_flow.at(t).phi - ref.sample(grid).phi).max() <= 1e-10
            assert np.abs(shear_flow.inverse_at(t).phi - ref.sample(grid, inverse=True).phi).max() <= 1e-10

    def test_volume_and_composition(self, shear_flow):
        for t in shear_flow.times:
            assert shear_flow.volume_error(t) <= 1e-6
            assert shear_flow.composition_error(t) <= 1e-6

    def test_anchor_is_identity(self, grid, shear_flow):
        np.testing.assert_array_equal(shear_flow.at(0.5).phi, grid.x)

    def test_general_velocity(self, grid):
        u = sp.random_solenoidal(grid, 3, np.random.default_rng(0))
        u /= np.abs(u).max()
        fm = tr.solve_flow(sp.StationaryTrajectory(grid, u), 0.0, [0.05, -0.05], window=0.05)
        for t in fm.times:
            assert fm.volume_error(t) <= 1e-6
            assert fm.composition_error(t) <= 1e-6

    def test_window_flagged(self, grid):
        traj = sp.StationaryTrajectory(grid, tr.shear_velocity(grid))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fm = tr.solve_flow(traj, 0.5, [0.7], window=0.05)
        assert fm.flagged == [0.7]
        assert any(issubclass(w.category, tr.FlowWindowWarning) for w in caught)

    def test_deformation_bound(self, shear_flow):
        rep = tr.verify_deformation(shear_flow, ell=0.06)
        assert rep.passed
        assert rep.max_phi == pytest.approx(0.05, rel=1e-8)
        assert not tr.verify_deformation(shear_flow, ell=0.04).passed

    def test_phi_transport_equation(self, grid, shear_flow):
        # d_t Phi + (u . grad) Phi = 0, checked by central differences in t
        u = tr.shear_velocity(grid)
        traj = sp.StationaryTrajectory(grid, u)
        h = 1e-3
        fm = tr.solve_flow(traj, 0.5, [0.52 - h, 0.52 + h], step=1e-4)
        dphi = (fm.at(0.52 + h).phi - fm.at(0.52 - h).phi) / (2 * h)
        mid = tr.ShearMap(2, 0.02).sample(grid)
        assert np.abs(dphi - tr.phi_time_derivative(mid, u)).max() <= 1e-8


@pytest.fixture(scope="module")
def part():
    return tr.build_time_partition(0.01, (0.4, 0.6))


class TestPartition:
    def test_sum_of_squares(self, part):
        t = np.linspace(0.4, 0.6, 801)
        np.testing.assert_allclose(part.sum_squares(t), 1.0, atol=1e-14)

    def test_support_and_overlap(self, part):
        t = np.linspace(0.3, 0.7, 4001)
        for i in part.active:
            on = part.eta(i, t) > 0
            assert np.all(np.abs(t[on] - i * part.tau) < part.tau)
        # only neighbours overlap
        assert all(b - a == 1 for a, b in part.overlap_pairs(t[::10]))

    def test_derivative(self, part):
        t = np.linspace(0.41, 0.59, 97)
        h = 1e-7
        for i in part.active[3:6]:
            fd = (part.eta(i, t + h) - part.eta(i, t - h)) / (2 * h)
            np.testing.assert_allclose(part.eta_derivative(i, t), fd, atol=1e-4 / part.tau)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            tr.build_time_partition(0.0, (0, 1))
        with pytest.raises(ValueError):
            tr.build_time_partition(0.1, (1, 0))


@pytest.fixture(scope="module")
def pair():
    s = geometry.build_direction_sets(0, 3)[0]
    return [(mikado.family_from_set(s, 0, 16, r, 2), mikado.family_from_set(s, 1, 16, r, 2))
            for r in (Fraction(1, 2), Fraction(1, 4))]


@pytest.fixture(scope="module")
def straight(pair):
    return [tr.measure_intersection(a, b) for a, b in pair]


class TestIntersection:
    def test_l1_over_r_constant(self, straight):
        vals = [s.l1_over_r for s in straight]
        assert max(vals) / min(vals) <= 1.1

    def test_qmc_agrees_with_marginals(self, pair, straight):
        a, b = pair[0]
        exact = straight[0].l1
        qmc = tr.measure_intersection(a, b, method="qmc", n_samples=2**16).l1
        assert qmc == pytest.approx(exact, rel=0.1)

    def test_parallel_rejected(self, pair):
        a, _ = pair[0]
        with pytest.raises(ValueError, match="parallel"):
            tr.measure_intersection(a, a)

    def test_steinmetz(self):
        assert tr.steinmetz_volume(1.0) == pytest.approx(16 / 3)


def test_lp_decoupling():
    g = sp.Grid(2, 256)
    f = 2 + np.sin(g.x[0]) * np.cos(g.x[1])
    gg = np.sin(40 * g.x[0]) ** 2
    res = tr.lp_decoupling_check(f, gg, g, lam=1.0, mu=40.0, p=1)
    assert res.gap_ok
    assert 0.5 <= res.ratio <= 2
