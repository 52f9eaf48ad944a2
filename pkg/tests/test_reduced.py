import numpy as np
import pytest

from reentrain.reduced import (simulate_adaptive, simulate_first_order,
                               simulate_phase_only, reduced_observer,
                               entrained_reduced_orbit, OffManifoldWarning)

from conftest import HOPF_MU, HOPF_OMEGA


class TestSimulators:

    def test_adaptive_with_u_equal_p_is_uniform_rotation(self, hopf_family):
        p0 = 0.005
        tr = simulate_adaptive(hopf_family, p0, [0.3, p0], (0.0, 20.0))
        om = hopf_family.omega(p0)
        assert np.max(np.abs(tr.theta - (0.3 + om * tr.t))) < 1e-6
        assert np.max(np.abs(tr.p - p0)) < 1e-10
        assert not tr.clamped

    def test_adaptive_p_follows_its_own_equation(self, hopf_family):
        u = lambda t: 0.004 * np.sin(0.7 * t)
        tr = simulate_adaptive(hopf_family, u, [0.0, 0.0], (0.0, 12.0),
                               t_eval=np.linspace(0.0, 12.0, 601))
        # midpoint finite difference of p against -R (u - p)
        k = 300
        t_mid = tr.t[k]
        dp_fd = (tr.p[k + 1] - tr.p[k - 1]) / (tr.t[k + 1] - tr.t[k - 1])
        tm = hopf_family.terms(tr.theta[k], tr.p[k])
        assert dp_fd == pytest.approx(-tm["R"] * (u(t_mid) - tr.p[k]), abs=1e-5)

    def test_adaptive_keeps_psi_at_zero(self, hopf_family):
        u = lambda t: 0.006 * np.cos(0.9 * t) + 0.003
        tr = simulate_adaptive(hopf_family, u, [0.5, 0.0, 0.0], (0.0, 40.0),
                               explicit_psi=True, rtol=1e-10, atol=1e-12)
        assert np.max(np.abs(tr.psi)) < 1e-9

    def test_first_order_free_decay(self, hopf_family):
        psi0 = 1e-3
        tr = simulate_first_order(hopf_family, 0.0, 0.0, [0.0, psi0],
                                  (0.0, 6.0), rtol=1e-10, atol=1e-13,
                                  t_eval=np.linspace(0.0, 6.0, 61))
        kap = hopf_family.kappa(0.0)
        expect = psi0 * np.exp(kap * tr.t)
        assert np.max(np.abs(tr.psi - expect)) < 1e-9
        assert np.max(np.abs(tr.theta - HOPF_OMEGA * tr.t)) < 1e-8

    def test_phase_only_free_rotation(self, hopf_family):
        tr = simulate_phase_only(hopf_family, 0.0, 0.0, 1.1, (0.0, 10.0))
        assert tr.theta[-1] == pytest.approx(1.1 + HOPF_OMEGA * 10.0, abs=1e-7)

    def test_formulations_agree_for_weak_input(self, hopf_family):
        u = lambda t: 1e-4 * np.sin(HOPF_OMEGA * t)
        span = (0.0, 15.0)
        te = np.linspace(0.0, 15.0, 151)
        a = simulate_adaptive(hopf_family, u, [0.0, 0.0], span, t_eval=te)
        f = simulate_first_order(hopf_family, 0.0, u, [0.0, 0.0], span, t_eval=te)
        g = simulate_phase_only(hopf_family, 0.0, u, 0.0, span, t_eval=te)
        assert np.max(np.abs(a.theta - f.theta)) < 3e-4
        assert np.max(np.abs(f.theta - g.theta)) < 3e-4


class TestObserver:

    def test_round_trip_on_orbit(self, hopf_family):
        th, p = 1.2, 0.01
        r = np.sqrt(HOPF_MU + p)
        x = np.array([r * np.cos(th), r * np.sin(th)])
        th_hat, psi_hat, p_hat = reduced_observer(hopf_family, x)
        assert th_hat == pytest.approx(th, abs=5e-3)
        assert abs(psi_hat) < 1e-4
        assert p_hat == pytest.approx(p, abs=2e-3)

    def test_small_radial_offset_is_absorbed_into_p(self, hopf_family):
        # concentric orbits: a radial deviation inside the hull is exactly a
        # different family member, so psi stays zero and p picks it up
        th, dr = 2.0, 0.005
        r = np.sqrt(HOPF_MU) + dr
        x = np.array([r * np.cos(th), r * np.sin(th)])
        th_hat, psi_hat, p_hat = reduced_observer(hopf_family, x)
        assert th_hat == pytest.approx(th, abs=0.05)
        assert abs(psi_hat) < 1e-6
        assert p_hat == pytest.approx(r * r - HOPF_MU, abs=2e-4)

    def test_offset_beyond_hull_reads_as_psi(self, hopf_family):
        th, dr = 2.0, 0.05   # needs p past the hull edge, so residual remains
        r = np.sqrt(HOPF_MU) + dr
        x = np.array([r * np.cos(th), r * np.sin(th)])
        th_hat, psi_hat, p_hat = reduced_observer(hopf_family, x)
        assert th_hat == pytest.approx(th, abs=0.05)
        assert p_hat == pytest.approx(hopf_family.hull[1], abs=1e-6)
        assert abs(psi_hat) > 1e-3

    def test_far_state_warns(self, hopf_family):
        with pytest.warns(OffManifoldWarning):
            reduced_observer(hopf_family, np.array([3.0, 3.0]))


@pytest.fixture(scope="module")
def locked(hopf_family):
    T_ext = 5.05
    u = lambda t: 0.05 * np.sin(2.0 * np.pi * t / T_ext)
    return entrained_reduced_orbit(hopf_family, u, T_ext,
                                   formulation="phase-only")


class TestEntrainedReduced:

    def test_one_cycle_per_period(self, locked):
        t = np.linspace(0.0, 50.0, 7)
        gain = locked.theta(t + locked.T_ext) - locked.theta(t)
        assert np.max(np.abs(gain - 2.0 * np.pi)) < 1e-6

    def test_aux_is_zero_for_phase_only(self, locked):
        assert np.max(np.abs(locked.aux(np.linspace(0.0, 5.0, 11)))) == 0.0
