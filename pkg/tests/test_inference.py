import numpy as np
import pytest

from reentrain.dynamics import THETA_GRID
from reentrain.family import fourier_eval
from reentrain.inference import (ObservableSystem, FieldObservable,
                                 measure_orbit, step1, step2,
                                 align_psi_gauge, _fit_fourier, _cycle_matrix,
                                 InsufficientDataError)
from reentrain.experiments import staggered_kick_protocol

from conftest import HOPF_MU, HOPF_OMEGA, make_hopf

T_NAT = 2.0 * np.pi / HOPF_OMEGA
R0 = np.sqrt(HOPF_MU)


class SineSystem(ObservableSystem):
    """Synthetic observable for event logic: F(t) = sin(2 pi t / 6)."""

    dt_sample = 0.05
    event = ("crossing", 0.0)

    def run(self, p, duration, control=None, x0=None):
        t = np.arange(0.0, duration + 0.5 * self.dt_sample, self.dt_sample)
        return t, np.sin(2.0 * np.pi * t / 6.0), None


class TestObservableHelpers:

    def test_crossing_event_times(self):
        sys = SineSystem()
        t, F, _ = sys.run(0.0, 30.0)
        ev = sys.event_times(t, F)
        expect = 6.0 * np.arange(1, len(ev) + 1)
        assert np.max(np.abs(ev - expect)) < 1e-3

    def test_cycle_matrix_resamples_each_cycle(self):
        sys = SineSystem()
        t, F, _ = sys.run(0.0, 40.0)
        q = int(round(6.0 / sys.dt_sample)) + 1
        rows, kept = _cycle_matrix(t, F, np.array([6.0, 12.0, 18.0]), q,
                                   sys.dt_sample)
        assert rows.shape == (3, q)
        assert len(kept) == 3
        expect = np.sin(2.0 * np.pi * np.arange(q) * sys.dt_sample / 6.0)
        assert np.max(np.abs(rows - expect[None, :])) < 1e-6

    def test_fit_fourier_round_trip(self):
        th = np.linspace(0.0, 2.0 * np.pi, 50, endpoint=False)
        vals = 1.5 - 0.7 * np.sin(th) + 0.2 * np.cos(3.0 * th)
        fit = _fit_fourier(th, vals, order=4)
        assert fit.residual_rms < 1e-10
        back = fourier_eval(fit.coeffs, th)
        assert np.max(np.abs(back - vals)) < 1e-9


@pytest.fixture(scope="module")
def hopf_obs():
    return FieldObservable(make_hopf(), component=0, event=("peak",),
                           settle=100.0, rtol=1e-10)


@pytest.fixture(scope="module")
def hopf_step1(hopf_obs):
    protocol = staggered_kick_protocol(
        hopf_obs, 0.0, kicks=((2.0, 0.05), (2.0, -0.02), (2.0, 0.005),
                              (2.0, -0.002)), tail=60.0)
    return step1(hopf_obs, 0.0, protocol)


class TestStep1:

    def test_period_and_orbit(self, hopf_obs):
        T, q, orbit, _ = measure_orbit(hopf_obs, 0.0)
        assert T == pytest.approx(T_NAT, rel=1e-4)
        assert q == int(round(T / hopf_obs.dt_sample)) + 1
        assert np.max(orbit) == pytest.approx(R0, abs=1e-3)
        assert np.min(orbit) == pytest.approx(-R0, abs=1e-3)

    def test_frequency_within_half_percent(self, hopf_step1):
        assert hopf_step1.omega == pytest.approx(HOPF_OMEGA, rel=5e-3)

    def test_kappa_within_five_percent(self, hopf_step1):
        assert hopf_step1.kappa == pytest.approx(-2.0 * HOPF_MU, rel=0.05)

    def test_two_pod_modes(self, hopf_step1):
        s = hopf_step1.basis.energy
        assert s[2] < 0.05 * s[1]

    def test_regression_quality(self, hopf_step1):
        assert hopf_step1.r_squared >= 0.95
        assert len(hopf_step1.regression_pairs) >= 3

    def test_explicit_floor_override(self, hopf_obs):
        protocol = staggered_kick_protocol(
            hopf_obs, 0.0, kicks=((2.0, 0.05), (2.0, -0.02), (2.0, 0.005),
                                  (2.0, -0.002)), tail=60.0)
        res = step1(hopf_obs, 0.0, protocol, psi_floor_frac=0.02,
                    psi_cap_frac=1.0)
        assert res.kappa == pytest.approx(-2.0 * HOPF_MU, rel=0.1)

    def test_too_little_data_raises(self, hopf_obs):
        def nearly_empty():
            t = np.arange(0.0, 8.0, hopf_obs.dt_sample)
            return [(t, R0 * np.cos(HOPF_OMEGA * t))]
        with pytest.raises(InsufficientDataError):
            step1(hopf_obs, 0.0, nearly_empty)


class TestStep2:

    def test_pulse_probes_recover_z(self, hopf_obs, hopf_step1):
        z_fit, i_fit = step2(hopf_obs, 0.0, hopf_step1, dL=0.02,
                             pulse_dt=0.5, trials=24, seed=4)
        th = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        got = fourier_eval(z_fit.coeffs, th)
        expect = -np.sin(th) / R0
        assert np.max(np.abs(got - expect)) < 0.1 * np.max(np.abs(expect))

    def test_pulse_probes_i_shape(self, hopf_obs, hopf_step1):
        # the amplitude response of the radial isostable is a pure first
        # harmonic; its scale depends on the data-driven psi gauge
        _, i_fit = step2(hopf_obs, 0.0, hopf_step1, dL=0.02,
                         pulse_dt=0.5, trials=24, seed=4)
        c = i_fit.coeffs
        first = abs(c[1])
        rest = abs(c[0]) + np.sum(np.abs(c[2:]))
        assert first > 5.0 * rest


class TestGauge:

    def test_align_psi_gauge_flips_anticorrelated_modes(self, hopf_step1):
        import copy
        flipped = copy.deepcopy(hopf_step1)
        flipped.basis.mu[:, 1] *= -1.0
        flips = align_psi_gauge({0.0: hopf_step1, 0.01: flipped})
        assert flips[0.0] == 1.0
        assert flips[0.01] == -1.0
