import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reentrain.family import (fourier_coeffs, fourier_eval, fit_fourier,
                              PCurve, ReductionFamily, FamilyInvalidError,
                              build_family)
from reentrain.dynamics import THETA_GRID

from conftest import HOPF_MU, HOPF_OMEGA, make_hopf_radial


class TestFourier:

    def test_round_trip_on_grid(self):
        vals = 1.0 + 0.4 * np.cos(THETA_GRID) - 0.2 * np.sin(3.0 * THETA_GRID)
        c = fourier_coeffs(vals, nharm=6)
        back = fourier_eval(c, THETA_GRID)
        assert np.max(np.abs(back - vals)) < 1e-12

    @given(st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=8))
    @settings(max_examples=25, deadline=None)
    def test_eval_matches_convention(self, coeffs_re):
        # c[0].real + 2 Re sum_k c[k] exp(i k theta)
        c = np.array(coeffs_re, dtype=complex)
        th = np.linspace(0.0, 2.0 * np.pi, 37)
        direct = c[0].real + 2.0 * sum(
            (c[k] * np.exp(1j * k * th)).real for k in range(1, len(c)))
        assert np.allclose(fourier_eval(c, th), direct, atol=1e-9)

    def test_eval_theta_derivative(self):
        vals = 0.7 * np.cos(2.0 * THETA_GRID) - 1.1 * np.sin(THETA_GRID)
        c = fourier_coeffs(vals, nharm=4)
        th = np.linspace(0.0, 2.0 * np.pi, 29)
        expect = -1.4 * np.sin(2.0 * th) - 1.1 * np.cos(th)
        assert np.max(np.abs(fourier_eval(c, th, d=1) - expect)) < 1e-10

    def test_fit_fourier_recovers_low_order_signal(self):
        rng = np.random.default_rng(2)
        th = rng.uniform(0.0, 2.0 * np.pi, 60)
        vals = 0.3 - 0.8 * np.sin(th) + 0.1 * np.cos(2.0 * th)
        c, rms = fit_fourier(th, vals, order=3)
        assert rms < 1e-10
        check = np.linspace(0.0, 2.0 * np.pi, 33)
        expect = 0.3 - 0.8 * np.sin(check) + 0.1 * np.cos(2.0 * check)
        assert np.max(np.abs(fourier_eval(c, check) - expect)) < 1e-9


class TestPCurve:

    def _curve(self):
        ps = np.linspace(-0.03, 0.03, 5)
        coeffs = np.array([fourier_coeffs(np.sin(THETA_GRID) * np.exp(2.0 * p),
                                          nharm=4) for p in ps])
        return PCurve(ps, coeffs), ps

    def test_interpolates_grid_points(self):
        curve, ps = self._curve()
        for p in ps:
            got = curve(THETA_GRID, p)
            expect = np.sin(THETA_GRID) * np.exp(2.0 * p)
            assert np.max(np.abs(got - expect)) < 1e-10

    def test_coeff_derivative_matches_finite_difference(self):
        curve, _ = self._curve()
        h = 1e-6
        fd = (curve.coeff_at(0.01 + h) - curve.coeff_at(0.01 - h)) / (2.0 * h)
        assert np.max(np.abs(curve.coeff_at(0.01, dp=1) - fd)) < 1e-5


class TestBuildFamily:

    def test_omega_and_kappa_over_p(self, hopf_family):
        for p in (-0.015, 0.0, 0.01):
            assert hopf_family.omega(p) == pytest.approx(HOPF_OMEGA, rel=1e-6)
            assert hopf_family.kappa(p) == pytest.approx(-2.0 * (HOPF_MU + p),
                                                         rel=1e-4)

    def test_parameter_sensitivities_are_radial(self, hopf_family):
        # radial orbit shift: D vanishes, Q is flat with magnitude
        # dr/dp = 1 / (2 sqrt(mu))
        th = THETA_GRID[::8]
        D = np.array([hopf_family.terms(t, 0.0)["D"] for t in th])
        Q = np.array([hopf_family.terms(t, 0.0)["Q"] for t in th])
        assert np.max(np.abs(D)) < 1e-3
        assert np.max(np.abs(np.abs(Q) - 0.5 / np.sqrt(HOPF_MU))) < 1e-3

    def test_z_curve_matches_closed_form(self, hopf_family):
        terms = [hopf_family.terms(th, 0.0)["z"] for th in THETA_GRID[::16]]
        expect = -np.sin(THETA_GRID[::16]) / np.sqrt(HOPF_MU)
        assert np.max(np.abs(np.array(terms) - expect)) < 1e-4

    def test_terms_theta_derivative(self, hopf_family):
        h = 1e-6
        for th in (0.4, 2.0, 5.5):
            t0 = hopf_family.terms(th - h, 0.004)
            t1 = hopf_family.terms(th + h, 0.004)
            mid = hopf_family.terms(th, 0.004)
            fd = (t1["z"] - t0["z"]) / (2.0 * h)
            assert mid["z_t"] == pytest.approx(fd, abs=1e-4)

    def test_terms_p_derivative(self, hopf_family):
        h = 1e-5
        t0 = hopf_family.terms(1.0, 0.005 - h)
        t1 = hopf_family.terms(1.0, 0.005 + h)
        mid = hopf_family.terms(1.0, 0.005)
        fd = (t1["i"] - t0["i"]) / (2.0 * h)
        assert mid["i_p"] == pytest.approx(fd, abs=1e-3)

    def test_r_is_i_over_q(self, hopf_family):
        tm = hopf_family.terms(2.2, -0.004)
        assert tm["R"] == pytest.approx(tm["i"] / tm["Q"], rel=1e-12)

    def test_hull_and_clamp(self, hopf_family):
        lo, hi = hopf_family.hull
        assert (lo, hi) == (-0.02, 0.02)
        assert hopf_family.clamp_p(0.5) == hi
        assert hopf_family.clamp_p(-0.5) == lo
        assert hopf_family.clamp_p(0.001) == 0.001

    def test_json_round_trip(self, hopf_family, tmp_path):
        path = tmp_path / "fam.json"
        path.write_text(hopf_family.to_json())
        back = ReductionFamily.from_json(path.read_text())
        assert back.omega(0.01) == pytest.approx(hopf_family.omega(0.01),
                                                 rel=1e-12)
        for th in (0.3, 3.1):
            a, b = hopf_family.terms(th, -0.01), back.terms(th, -0.01)
            for key in ("z", "i", "D", "Q"):
                assert a[key] == pytest.approx(b[key], rel=1e-12)

    def test_q_floor_guard(self, hopf_family):
        import copy
        bad = copy.deepcopy(hopf_family)
        ps = bad.curves["Q"].p_grid
        # Q(theta) = 1 + cos(theta) dips to zero at theta = pi
        coeffs = np.tile(np.array([1.0, 0.5], dtype=complex), (len(ps), 1))
        bad.curves["Q"] = PCurve(ps, coeffs)
        with pytest.raises(FamilyInvalidError):
            bad.check_q_floor()
