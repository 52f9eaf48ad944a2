import numpy as np
import pytest

from reentrain.models import (light_waveform, circadian_field, CIRCADIAN_PARAMS,
                              PopulationModel, build_population,
                              POPULATION_PARAMS, HETEROGENEOUS)


class TestLightWaveform:

    def test_plateau_and_night(self):
        assert light_waveform(12.0, 0.01) == pytest.approx(0.01, rel=1e-6)
        assert light_waveform(0.0, 0.01) == pytest.approx(0.0, abs=1e-8)
        assert light_waveform(24.0 + 12.0, 0.01) == pytest.approx(0.01, rel=1e-6)

    def test_period_24(self):
        t = np.linspace(0.0, 24.0, 97)
        assert np.allclose(light_waveform(t, 0.02), light_waveform(t + 24.0, 0.02))

    def test_scales_linearly_with_L0(self):
        t = np.linspace(0.0, 24.0, 49)
        assert np.allclose(3.0 * light_waveform(t, 0.01), light_waveform(t, 0.03))


class TestCircadianField:

    def test_jacobian_matches_finite_difference(self):
        field = circadian_field()
        x = np.array([0.4, 1.7, 1.2])
        J = field.jacobian(x, 0.0, 0.0)
        h = 1e-7
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = h
            col = (field.rhs(x + dx, 0.0, 0.0, 0.0)
                   - field.rhs(x - dx, 0.0, 0.0, 0.0)) / (2.0 * h)
            assert np.max(np.abs(J[:, j] - col)) < 1e-5

    def test_input_and_parameter_enter_additively_in_B(self):
        field = circadian_field()
        x = np.array([0.4, 1.7, 1.2])
        base = field.rhs(x, 0.0, 0.0, 0.0)
        bumped = field.rhs(x, 0.003, 0.0, 0.002)
        assert bumped[0] == pytest.approx(base[0] + 0.005, abs=1e-14)
        assert np.allclose(bumped[1:], base[1:])

    def test_overrides_change_parameters(self):
        field = circadian_field(v1=0.9)
        x = np.array([0.4, 1.7, 1.2])
        default = circadian_field().rhs(x, 0.0, 0.0, 0.0)
        changed = field.rhs(x, 0.0, 0.0, 0.0)
        assert changed[0] != default[0]
        assert CIRCADIAN_PARAMS["v1"] == 0.84  # defaults untouched


@pytest.fixture(scope="module")
def model():
    return build_population(12, seed=3)


class TestPopulationModel:

    def test_state_layout_and_mean_field(self, model):
        N = model.N
        x = np.zeros(4 * N)
        x[3 * N:] = 2.0
        assert model.mean_field(x) == pytest.approx(2.0)

    def test_heterogeneity_reproducible(self):
        a = PopulationModel(N=8, seed=5)
        b = PopulationModel(N=8, seed=5)
        for name in HETEROGENEOUS:
            assert np.array_equal(a.cell[name], b.cell[name])
        c = PopulationModel(N=8, seed=6)
        assert not np.array_equal(a.cell["k3"], c.cell["k3"])

    def test_rates_positive_and_near_nominal(self, model):
        for name in HETEROGENEOUS:
            draws = model.cell[name]
            assert np.all(draws > 0.0)
            assert abs(np.mean(draws) - POPULATION_PARAMS[name]) < 0.02

    def test_alpha_nonnegative(self, model):
        assert np.all(model.alpha >= 0.0)

    def test_coupling_scale_changes_rhs(self, model):
        field = model.field()
        rng = np.random.default_rng(0)
        x = 0.5 + 0.1 * rng.random(4 * model.N)
        base = field.rhs(x, 0.0, 0.0, 0.0)
        model.coupling_scale = 0.5
        try:
            halved = field.rhs(x, 0.0, 0.0, 0.0)
        finally:
            model.coupling_scale = 1.0
        assert not np.allclose(base, halved)

    def test_light_enters_through_alpha(self, model):
        field = model.field()
        rng = np.random.default_rng(1)
        x = 0.5 + 0.1 * rng.random(4 * model.N)
        N = model.N
        du = 0.01
        diff = field.rhs(x, 0.0, 0.0, du) - field.rhs(x, 0.0, 0.0, 0.0)
        assert np.allclose(diff[:N], model.alpha * du)
        assert np.allclose(diff[N:], 0.0)
