import numpy as np
import pytest

from reentrain.evaluate import (_peak_times, _crossing_times, observation_times,
                                interpolated_phases, rotating_order_parameter)
from reentrain.models import LightSchedule, light_waveform


class TestEventTimes:

    def test_peak_times_quadratic_accuracy(self):
        t = np.arange(0.0, 50.0, 0.1)
        v = np.cos(2.0 * np.pi * (t - 0.337) / 7.0)
        pk = _peak_times(t, v)
        expect = 0.337 + 7.0 * np.arange(len(pk))
        assert np.max(np.abs(pk - expect)) < 1e-3

    def test_crossing_times_both_directions(self):
        t = np.arange(0.0, 30.0, 0.05)
        v = np.sin(2.0 * np.pi * t / 6.0)
        up = _crossing_times(t, v, 0.0, 1)
        down = _crossing_times(t, v, 0.0, -1)
        assert np.max(np.abs(up - 6.0 * np.arange(1, len(up) + 1))) < 1e-3
        assert np.max(np.abs(down - (3.0 + 6.0 * np.arange(len(down))))) < 1e-3

    def test_observation_times_dispatch(self):
        t = np.arange(0.0, 30.0, 0.05)
        v = np.sin(2.0 * np.pi * t / 6.0)
        pk = observation_times(t, v, ("peak", 0))
        cr = observation_times(t, v, ("crossing", 0, 0.0))
        assert np.max(np.abs(pk - (1.5 + 6.0 * np.arange(len(pk))))) < 1e-3
        assert np.max(np.abs(cr - 6.0 * np.arange(1, len(cr) + 1))) < 1e-3


class TestLightSchedule:

    def test_shift_applies_after_t0(self):
        sched = LightSchedule(L0=0.01, shift=6.0, t0=0.0)
        assert sched.nominal(-2.0) == pytest.approx(light_waveform(-2.0, 0.01))
        assert sched.nominal(30.0) == pytest.approx(light_waveform(36.0, 0.01))

    def test_control_overlay_and_clipping(self):
        sched = LightSchedule(L0=0.01, control=lambda t: -1.0, L_min=0.0)
        assert sched(12.0) == 0.0
        bright = LightSchedule(L0=0.01, control=lambda t: 1.0, L_max=0.02)
        assert bright(12.0) == 0.02


class TestSynchrony:

    def test_interpolated_phases_linear_between_events(self):
        ev = [np.array([0.0, 10.0, 20.0]), np.array([5.0, 15.0, 25.0])]
        t = np.array([0.0, 5.0, 12.5, 30.0])
        ph = interpolated_phases(ev, t)
        assert ph[0, 0] == pytest.approx(0.0)
        assert ph[0, 1] == pytest.approx(np.pi)
        assert ph[0, 2] == pytest.approx(2.0 * np.pi * 1.25)
        assert np.isnan(ph[0, 3])      # beyond the last event
        assert np.isnan(ph[1, 0])      # before the first event

    def test_identical_phases_give_unit_order_parameter(self):
        t = np.linspace(0.0, 48.0, 25)
        base = 2.0 * np.pi * t / 24.0
        phases = np.tile(base, (40, 1))
        r = rotating_order_parameter(phases, t, T_ext=24.0)
        assert np.max(np.abs(np.abs(r) - 1.0)) < 1e-12

    def test_splay_state_gives_zero(self):
        t = np.linspace(0.0, 24.0, 9)
        n = 16
        phases = (2.0 * np.pi * t[None, :] / 24.0
                  + 2.0 * np.pi * np.arange(n)[:, None] / n)
        r = rotating_order_parameter(phases, t, T_ext=24.0)
        assert np.max(np.abs(r)) < 1e-12

    def test_common_lag_appears_in_argument(self):
        t = np.linspace(0.0, 24.0, 9)
        lag = 5.0
        phases = np.tile(2.0 * np.pi * (t - lag) / 24.0, (8, 1))
        r = rotating_order_parameter(phases, t, T_ext=24.0)
        expect = -2.0 * np.pi * lag / 24.0
        assert np.allclose(np.angle(r), expect, atol=1e-12)
